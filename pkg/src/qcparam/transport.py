"""Fokker-Planck transport of vertex positions by explicit Euler sub-steps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .measure import (
    DENSITY_FLOOR,
    pushforward_density,
    vertex_density,
    vertex_density_gradient,
)
from .mesh import Embedding2D, orientation_report

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowParams:
    """Durations and step sizes of one outer iteration.

    ``t1`` drives transport, ``t2`` the L2 shrink of the Beltrami field and
    ``t3`` its smoothing. ``tau_fp`` defaults to ``t1 / 10``; ``tau_smooth``
    defaults to the smoothing stability bound.
    """

    t1: float = 0.0015
    t2: float = 0.0
    t3: float = 0.0
    tau_fp: float | None = None
    tau_smooth: float | None = None
    cap_k: float = 0.9
    max_backtracks: int = 20
    boundary_density: str = "linear"

    def __post_init__(self):
        for name in ("t1", "t2", "t3"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.cap_k < 1.0:
            raise ValidationError(f"cap_k must lie in [0, 1), got {self.cap_k}")
        if self.tau_fp is None:
            object.__setattr__(self, "tau_fp", self.t1 / 10 if self.t1 > 0 else 0.0)
        if self.t1 > 0 and not 0 < self.tau_fp <= self.t1:
            raise ValidationError(f"tau_fp must lie in (0, t1], got {self.tau_fp}")
        if self.tau_smooth is not None and self.t3 > 0 and not 0 < self.tau_smooth <= self.t3:
            raise ValidationError(f"tau_smooth must lie in (0, t3], got {self.tau_smooth}")
        if self.max_backtracks < 0:
            raise ValidationError("max_backtracks must be >= 0")
        if self.boundary_density not in ("average", "linear"):
            raise ValidationError(f"unknown boundary density rule {self.boundary_density!r}")


def velocity_field(density, embedding, reference, projection=None, boundary="linear"):
    """``v = -grad(rho)/rho - grad V`` at every vertex.

    With a cut-torus ``projection`` the velocity is computed per closed
    vertex using the full (universal-cover) neighbourhood and returned per
    open vertex, so identified copies move identically. ``boundary`` is the
    vertex-density rule at boundary vertices (see ``vertex_density``).
    """
    rho = vertex_density(density, embedding, projection, boundary=boundary)
    grad = vertex_density_gradient(density, embedding, rho, projection)
    if projection is None:
        pos = embedding.positions
    else:
        projection = np.asarray(projection)
        first = np.full(len(rho), -1, dtype=np.int64)
        first[projection[::-1]] = np.arange(len(projection))[::-1]
        pos = embedding.positions[first]
    v = -grad / np.maximum(rho, DENSITY_FLOOR)[:, None] - reference.grad_potential(pos)
    if projection is not None:
        v = v[projection]
    return v


@dataclass
class TransportResult:
    embedding: Embedding2D
    completed: bool
    substeps: int = 0
    backtracks: int = 0
    elapsed: float = 0.0


def transport_apply(embedding, source, reference, t, params, *, projection=None,
                    frozen=None, on_substep=None):
    """Advect vertices along the Fokker-Planck velocity for total time ``t``.

    Sub-steps of ``params.tau_fp`` (the last one shortened). A sub-step that
    would flip a face is retried with the step halved, up to
    ``params.max_backtracks`` times; if that is exhausted the last valid
    embedding is returned with ``completed=False``. ``frozen`` vertices
    (the boundary, for a Dirichlet problem) receive zero velocity.
    ``on_substep(embedding, density)`` is called after every accepted step.
    """
    if t < 0:
        raise ValidationError("transport duration must be >= 0")
    result = TransportResult(embedding, True)
    if t == 0:
        return result
    tau = params.tau_fp if params.tau_fp else t
    pos = np.array(embedding.positions)
    mesh = embedding.mesh
    remaining = t
    while remaining > 1e-12 * t:
        emb = Embedding2D(mesh, pos)
        dens = pushforward_density(source, emb)
        v = velocity_field(dens, emb, reference, projection, params.boundary_density)
        if frozen is not None:
            v[frozen] = 0.0
        dt = min(tau, remaining)
        for attempt in range(params.max_backtracks + 1):
            trial = pos + dt * v
            if orientation_report(Embedding2D(mesh, trial)) == 0:
                break
            result.backtracks += 1
            dt *= 0.5
        else:
            log.warning("transport: backtracking exhausted after %d halvings", params.max_backtracks)
            result.embedding = emb
            result.completed = False
            return result
        pos = trial
        remaining -= dt
        result.substeps += 1
        result.elapsed += dt
        if on_substep is not None:
            emb = Embedding2D(mesh, pos)
            on_substep(emb, pushforward_density(source, emb))
    result.embedding = Embedding2D(mesh, pos)
    return result


def n_substeps(t, tau):
    """Number of explicit steps covering ``t`` with steps of at most ``tau``."""
    if t <= 0:
        return 0
    return max(1, math.ceil(t / tau - 1e-9))
