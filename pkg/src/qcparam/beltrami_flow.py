"""Operators on Beltrami fields: cap projection, L2 shrink and dual-graph heat smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StabilityError, ValidationError
from .mesh import Embedding2D, edge_cotangent_weights, local_frames, triangle_areas
from .qc import BeltramiField

WEIGHT_FLOOR = 1e-6
STABILITY_SAFETY = 0.9


@dataclass(frozen=True)
class DualGraph:
    """Faces as nodes, interior edges as weighted links ``(a[e], b[e], weights[e])``."""

    a: np.ndarray
    b: np.ndarray
    weights: np.ndarray
    areas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int64).ravel()
        b = np.asarray(self.b, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        areas = np.asarray(self.areas, dtype=float).ravel()
        if not (len(a) == len(b) == len(w)):
            raise ValidationError("dual edge arrays must have equal length")
        if np.any(w <= 0):
            raise ValidationError("dual edge weights must be positive")
        if np.any(areas <= 0):
            raise ValidationError("dual node areas must be positive")
        if len(a) and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= len(areas)):
            raise ValidationError("dual edge references an unknown face")
        for name, val in (("a", a), ("b", b), ("weights", w), ("areas", areas)):
            object.__setattr__(self, name, val)

    @property
    def n_faces(self):
        return len(self.areas)

    @classmethod
    def from_geometry(cls, mesh, corners=None, floor=WEIGHT_FLOOR):
        """Cotangent-weighted dual graph of ``mesh``.

        ``corners`` gives per-face geometry (an open-chart corner array for a
        cut torus, whose closed ``mesh`` supplies the adjacency); by default
        the mesh's own faces, flattened one at a time.
        """
        if corners is None:
            corners = local_frames(mesh.corners())
        elif isinstance(corners, Embedding2D):
            corners = corners.corners
        corners = np.asarray(corners, dtype=float)
        w = edge_cotangent_weights(mesh, corners)
        inner = mesh.interior_edges
        ef = mesh.edge_faces[inner]
        return cls(ef[:, 0], ef[:, 1], np.maximum(w[inner], floor), triangle_areas(corners))

    def weighted_degree(self):
        deg = np.bincount(self.a, weights=self.weights, minlength=self.n_faces)
        return deg + np.bincount(self.b, weights=self.weights, minlength=self.n_faces)


def _values(mu):
    return mu.values if isinstance(mu, BeltramiField) else np.asarray(mu, dtype=complex)


def project_cap(mu, k):
    """Rescale coefficients with ``|mu| > k`` to magnitude ``k``, keeping the argument."""
    if not 0.0 <= k < 1.0:
        raise ValidationError(f"cap must lie in [0, 1), got {k}")
    v = np.array(_values(mu), dtype=complex)
    # anti-conformal faces carry mu = inf and have no direction to keep
    v[~np.isfinite(v)] = k
    mag = np.abs(v)
    over = mag > k
    if np.any(over):
        v[over] = v[over] * (k / mag[over])
        # rounding can leave |v| a few ulps above k
        for _ in range(64):
            still = np.abs(v) > k
            if not np.any(still):
                break
            w = v[still]
            v[still] = np.nextafter(w.real, 0.0) + 1j * np.nextafter(w.imag, 0.0)
    return BeltramiField(v)


def shrink_l2(mu, t):
    """Multiply by ``exp(-t)``."""
    if t < 0:
        raise ValidationError("shrink duration must be >= 0")
    return BeltramiField(_values(mu) * math.exp(-t))


def dual_laplacian(graph, values):
    """``(1/A_f) sum_e w_e (g(f') - g(f))`` over the interior edges of each face."""
    g = np.asarray(values, dtype=complex)
    d = g[graph.b] - g[graph.a]
    n = graph.n_faces
    wd = graph.weights * d
    out = np.bincount(graph.a, weights=wd.real, minlength=n) + 1j * np.bincount(
        graph.a, weights=wd.imag, minlength=n
    )
    out -= np.bincount(graph.b, weights=wd.real, minlength=n) + 1j * np.bincount(
        graph.b, weights=wd.imag, minlength=n
    )
    return out / graph.areas


def dual_dirichlet_energy(graph, values):
    """``sum_e w_e |g(f') - g(f)|^2``."""
    g = np.asarray(_values(values), dtype=complex)
    with np.errstate(invalid="ignore"):
        return float(np.sum(graph.weights * np.abs(g[graph.b] - g[graph.a]) ** 2))


def stability_bound(graph):
    """Largest explicit-Euler step accepted by :func:`smooth`."""
    deg = graph.weighted_degree()
    with np.errstate(divide="ignore"):
        ratio = np.where(deg > 0, graph.areas / deg, np.inf)
    return STABILITY_SAFETY * float(ratio.min())


def smooth(mu, t, tau=None, graph=None, on_step=None):
    """Explicit Euler heat flow ``mu <- mu + tau * dual_laplacian(mu)`` for time ``t``.

    ``tau`` defaults to the stability bound and the last step is shortened to
    land on ``t``. A ``tau`` above the bound raises :class:`StabilityError`.
    """
    if t < 0:
        raise ValidationError("smoothing duration must be >= 0")
    v = np.array(_values(mu), dtype=complex)
    if t == 0:
        return BeltramiField(v)
    if graph is None:
        raise ValidationError("smoothing needs a dual graph")
    bound = stability_bound(graph)
    if tau is None:
        tau = min(bound, t)
    if tau <= 0:
        raise ValidationError("smoothing step must be positive")
    if tau > bound:
        raise StabilityError(
            f"smoothing step {tau:.3g} exceeds the stability bound {bound:.3g}",
            tau=tau, bound=bound,
        )
    n = max(1, math.ceil(t / tau - 1e-9))
    done = 0.0
    for i in range(n):
        dt = min(tau, t - done)
        if dt <= 0:
            break
        v = v + dt * dual_laplacian(graph, v)
        done += dt
        if on_step is not None:
            on_step(i, v)
    return BeltramiField(v)
