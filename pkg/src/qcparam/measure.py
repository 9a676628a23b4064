"""Piecewise-constant face densities, pushforwards and the discrete relative entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFaceError, ValidationError
from .mesh import pl_gradient, signed_areas, triangle_areas

DENSITY_FLOOR = 1e-12
MASS_TOL = 1e-12

# Degree-5 seven-point rule on the triangle (barycentric points, weights sum to 1).
_s = np.sqrt(15.0)
_a1, _b1 = (9 - 2 * _s) / 21, (6 + _s) / 21
_a2, _b2 = (9 + 2 * _s) / 21, (6 - _s) / 21
QUAD7_POINTS = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
        [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
    ]
)
QUAD7_WEIGHTS = np.array(
    [9 / 40] + [(155 + _s) / 1200] * 3 + [(155 - _s) / 1200] * 3
)


@dataclass(frozen=True)
class FaceDensity:
    """Positive per-face density with ``sum(values * areas) == 1``.

    ``areas`` are the areas of the faces the density lives on (source faces
    for a source measure, image faces for a pushforward).
    """

    values: np.ndarray
    areas: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        a = np.array(self.areas, dtype=float)
        if v.shape != a.shape or v.ndim != 1:
            raise ValidationError("density values and areas must be matching 1D arrays")
        if not np.all(v > 0):
            raise ValidationError("densities must be strictly positive")
        total = float(np.dot(v, a))
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"density is not normalized (total mass {total!r})")
        v.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "areas", a)

    @classmethod
    def normalized(cls, values, areas):
        values = np.asarray(values, dtype=float)
        areas = np.asarray(areas, dtype=float)
        return cls(values / np.dot(values, areas), areas)

    @classmethod
    def uniform(cls, areas):
        areas = np.asarray(areas, dtype=float)
        return cls(np.full(len(areas), 1.0 / areas.sum()), areas)

    @property
    def masses(self):
        return self.values * self.areas

    @property
    def total_mass(self):
        return float(np.dot(self.values, self.areas))


def sample_points(corners, bary):
    """Points at barycentric coordinates ``bary`` (q, 3) in each triangle -> (m, q, 2)."""
    return np.einsum("qk,mkd->mqd", bary, corners)


def subdivide_corners(corners, levels=1):
    """Midpoint-subdivide triangles ``levels`` times (4**levels children each)."""
    c = np.asarray(corners, dtype=float)
    for _ in range(levels):
        a, b, d = c[:, 0], c[:, 1], c[:, 2]
        ab, bd, da = (a + b) / 2, (b + d) / 2, (d + a) / 2
        c = np.concatenate(
            [
                np.stack([a, ab, da], 1),
                np.stack([ab, b, bd], 1),
                np.stack([da, bd, d], 1),
                np.stack([ab, bd, da], 1),
            ]
        )
    return c


def integrate(func, corners, levels=0):
    """Seven-point quadrature of ``func`` over each triangle, shape (m,)."""
    m = len(corners)
    sub = subdivide_corners(corners, levels)
    pts = sample_points(sub, QUAD7_POINTS)
    vals = func(pts.reshape(-1, 2)).reshape(len(sub), -1) @ QUAD7_WEIGHTS
    per = vals * triangle_areas(sub)
    return per.reshape(4**levels, m).sum(axis=0)


class ReferenceDensity:
    """Target density ``u = exp(-V)`` with analytic (or interpolated) ``grad V``.

    ``V = V_raw - log_normalizer``; the normalizer is fitted by
    :meth:`normalized` so that ``u`` integrates to one over a domain mesh.
    Only entropy values depend on it, never the velocity.
    """

    def __init__(self, kind, *, log_normalizer=0.0, **params):
        if kind not in ("uniform", "gaussian", "grid", "cosine"):
            raise ValidationError(f"unknown reference density kind {kind!r}")
        self.kind = kind
        self.params = params
        self.log_normalizer = float(log_normalizer)
        if kind == "gaussian":
            self.center = np.asarray(params.get("center", (0.0, 0.0)), dtype=float)
            self.rate = float(params.get("rate", 1.0))
        elif kind == "cosine":
            self.amplitude = float(params.get("amplitude", 1.0))
            lat = np.asarray(params.get("lattice", np.eye(2)), dtype=float)
            self.inv_lattice = np.linalg.inv(lat)
        elif kind == "grid":
            self._setup_grid(params)

    def _setup_grid(self, params):
        u = np.asarray(params["values"], dtype=float)
        if u.ndim != 2 or min(u.shape) < 2:
            raise ValidationError("grid reference needs at least 2x2 samples")
        self.origin = np.asarray(params["origin"], dtype=float)
        self.spacing = np.asarray(params["spacing"], dtype=float) * np.ones(2)
        V = -np.log(np.maximum(u, DENSITY_FLOOR))
        self.grid_V = V
        gy, gx = np.gradient(V, self.spacing[1], self.spacing[0])
        self.grid_gV = np.stack([gx, gy], axis=-1)

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def gaussian(cls, center=(0.0, 0.0), rate=1.0):
        return cls("gaussian", center=tuple(center), rate=rate)

    @classmethod
    def cosine(cls, amplitude=1.0, lattice=((1.0, 0.0), (0.0, 1.0))):
        return cls("cosine", amplitude=amplitude, lattice=np.asarray(lattice).tolist())

    @classmethod
    def grid(cls, values, origin, spacing):
        return cls("grid", values=np.asarray(values, dtype=float), origin=origin, spacing=spacing)

    @classmethod
    def from_file(cls, path):
        """Grid text file: header ``nx ny x0 y0 dx dy`` then ``ny`` rows of ``nx`` values."""
        from .errors import MeshIOError

        try:
            with open(path) as fh:
                lines = [ln.split("#", 1)[0].split() for ln in fh]
        except OSError as exc:
            raise MeshIOError(f"cannot read {path}: {exc.strerror}") from None
        tokens = [t for ln in lines for t in ln]
        try:
            nx, ny = int(tokens[0]), int(tokens[1])
            x0, y0, dx, dy = map(float, tokens[2:6])
            vals = np.array(tokens[6 : 6 + nx * ny], dtype=float).reshape(ny, nx)
        except (ValueError, IndexError):
            raise ValidationError(f"malformed density grid file {path}") from None
        if not np.all(vals > 0):
            raise ValidationError("density grid values must be positive")
        return cls.grid(vals, (x0, y0), (dx, dy))

    def with_normalizer(self, log_normalizer):
        params = dict(self.params)
        return type(self)(self.kind, log_normalizer=log_normalizer, **params)

    def normalized(self, domain_corners, levels=1):
        """Copy whose density integrates to one over the given triangles."""
        Z = float(integrate(lambda x: np.exp(-self.raw_potential(x)), domain_corners, levels).sum())
        return self.with_normalizer(-np.log(Z))

    # -- evaluation -------------------------------------------------------

    def _grid_locate(self, x):
        s = (x - self.origin) / self.spacing
        ny, nx = self.grid_V.shape
        outside = (s[:, 0] < -1e-9) | (s[:, 0] > nx - 1 + 1e-9) | (s[:, 1] < -1e-9) | (s[:, 1] > ny - 1 + 1e-9)
        if np.any(outside):
            raise ValidationError(
                "reference density evaluated outside its grid",
                points=x[outside][:5],
            )
        i = np.clip(np.floor(s[:, 0]).astype(int), 0, nx - 2)
        j = np.clip(np.floor(s[:, 1]).astype(int), 0, ny - 2)
        fx, fy = s[:, 0] - i, s[:, 1] - j
        return i, j, fx, fy

    def _bilinear(self, field, x):
        i, j, fx, fy = self._grid_locate(x)
        if field.ndim == 3:
            fx, fy = fx[:, None], fy[:, None]
        return (
            field[j, i] * (1 - fx) * (1 - fy)
            + field[j, i + 1] * fx * (1 - fy)
            + field[j + 1, i] * (1 - fx) * fy
            + field[j + 1, i + 1] * fx * fy
        )

    def raw_potential(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "uniform":
            return np.zeros(len(x))
        if self.kind == "gaussian":
            d = x - self.center
            return self.rate * np.einsum("ij,ij->i", d, d)
        if self.kind == "cosine":
            s = x @ self.inv_lattice
            return -self.amplitude * np.cos(2 * np.pi * s).sum(axis=1)
        return self._bilinear(self.grid_V, x)

    def potential(self, x):
        """``V(x)`` including the normalizer."""
        return self.raw_potential(x) - self.log_normalizer

    def density(self, x):
        return np.exp(-self.potential(x))

    def grad_potential(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "uniform":
            return np.zeros_like(x)
        if self.kind == "gaussian":
            return 2.0 * self.rate * (x - self.center)
        if self.kind == "cosine":
            s = x @ self.inv_lattice
            gs = 2 * np.pi * self.amplitude * np.sin(2 * np.pi * s)
            return gs @ self.inv_lattice.T
        return self._bilinear(self.grid_gV, x)

    def describe(self):
        out = {"kind": self.kind, "log_normalizer": self.log_normalizer}
        for k, v in self.params.items():
            if k != "values":
                out[k] = np.asarray(v).tolist()
        return out


def _image_areas(corners):
    sa = signed_areas(corners)
    ext = np.ptp(corners.reshape(-1, 2), axis=0)
    tol = 1e-14 * float(ext @ ext)
    bad = np.flatnonzero(sa <= tol)
    if len(bad):
        raise DegenerateFaceError("image face area below tolerance", faces=bad[:10])
    return sa


def pushforward_values(values, source_areas, image_areas):
    """``rho_f = rho * Area(source face) / Area(image face)``, face by face."""
    return np.asarray(values, dtype=float) * np.asarray(source_areas) / np.asarray(image_areas)


def pushforward_density(source, embedding):
    """Density of the pushforward measure on the image faces.

    Each face keeps its mass, so the total is preserved exactly.
    """
    img = _image_areas(embedding.corners)
    return FaceDensity(pushforward_values(source.values, source.areas, img), img)


def _corner_vertex(embedding, projection):
    faces = embedding.mesh.faces
    if projection is None:
        return faces, embedding.mesh.n_vertices
    projection = np.asarray(projection)
    return projection[faces], int(projection.max()) + 1


def vertex_density(density, embedding, projection=None, boundary="average"):
    """Area-weighted average of incident face densities at each vertex.

    With ``projection`` (open -> closed vertex map of a cut torus) the
    averages run over all faces around the closed vertex, i.e. its full
    neighbourhood in the universal cover; the result is per closed vertex.

    ``boundary="linear"`` replaces the one-sided average at boundary
    vertices by a least-squares linear fit of the face densities in the
    vertex's two-ring, evaluated at the vertex. The one-sided average is
    only first-order accurate there, which makes gradients on the first
    interior ring inconsistent.
    """
    cv, n = _corner_vertex(embedding, projection)
    a = density.areas
    num = np.bincount(cv.ravel(), weights=np.repeat(a * density.values, 3), minlength=n)
    den = np.bincount(cv.ravel(), weights=np.repeat(a, 3), minlength=n)
    if np.any(den <= 0):
        raise ValidationError("isolated vertex without incident faces",
                              vertices=np.flatnonzero(den <= 0)[:10])
    rho = num / den
    if boundary == "linear" and projection is None:
        rho = _extrapolate_boundary(density, embedding, rho)
    elif boundary not in ("average", "linear"):
        raise ValidationError(f"unknown boundary rule {boundary!r}")
    return rho


def _extrapolate_boundary(density, embedding, rho):
    mesh = embedding.mesh
    b = mesh.boundary_vertices
    if len(b) == 0:
        return rho
    inc = mesh.vertex_face_incidence
    ring = (inc[b] @ inc.T).astype(bool).astype(float)
    two_ring = (ring @ inc).tocoo()
    rows, faces = two_ring.row, two_ring.col
    cent = embedding.corners.mean(axis=1)
    d = cent[faces] - embedding.positions[b[rows]]
    X = np.column_stack([np.ones(len(rows)), d])
    w = density.areas[faces]
    y = density.values[faces]
    k = len(b)
    XtX = np.zeros((k, 3, 3))
    Xty = np.zeros((k, 3))
    np.add.at(XtX, rows, w[:, None, None] * X[:, :, None] * X[:, None, :])
    np.add.at(Xty, rows, (w * y)[:, None] * X)
    lo = np.full(k, np.inf)
    hi = np.zeros(k)
    np.minimum.at(lo, rows, y)
    np.maximum.at(hi, rows, y)
    out = rho.copy()
    scale = np.trace(XtX, axis1=1, axis2=2)
    ok = np.abs(np.linalg.det(XtX)) > 1e-12 * scale**3
    if np.any(ok):
        coef = np.linalg.solve(XtX[ok], Xty[ok][:, :, None])[:, 0, 0]
        out[b[ok]] = np.clip(coef, 0.5 * lo[ok], 2.0 * hi[ok])
    return out


def vertex_density_gradient(density, embedding, rho_v=None, projection=None):
    """Area-weighted average of the face gradients of the interpolated vertex density."""
    cv, n = _corner_vertex(embedding, projection)
    if rho_v is None:
        rho_v = vertex_density(density, embedding, projection)
    g = pl_gradient(embedding.corners, rho_v[cv])
    a = density.areas
    den = np.bincount(cv.ravel(), weights=np.repeat(a, 3), minlength=n)
    out = np.empty((n, 2))
    for d in range(2):
        out[:, d] = np.bincount(cv.ravel(), weights=np.repeat(a * g[:, d], 3), minlength=n)
    return out / den[:, None]


def relative_entropy(density, embedding, reference):
    """Discrete relative entropy with a one-point (centroid) rule for ``V``."""
    corners = embedding.corners
    a = density.areas
    rho = density.values
    v = reference.potential(corners.mean(axis=1))
    return float(np.sum(a * rho * np.log(rho)) + np.sum(rho * a * v))


def relative_entropy_fine(density, embedding, reference, levels=2):
    """Relative entropy with ``V`` integrated by the seven-point rule on subdivided faces."""
    a = density.areas
    rho = density.values
    iv = integrate(reference.potential, embedding.corners, levels)
    return float(np.sum(a * rho * np.log(rho)) + np.sum(rho * iv))


def entropy_error_bound(density, embedding, reference, levels=2):
    """``sum_f rho_f * int_f |V - V(centroid_f)|``, a bound on the centroid-rule error."""
    corners = embedding.corners
    sub = subdivide_corners(corners, levels)
    m = len(corners)
    vc = np.tile(reference.potential(corners.mean(axis=1)), 4**levels)
    pts = sample_points(sub, QUAD7_POINTS)
    vals = np.abs(reference.potential(pts.reshape(-1, 2)).reshape(len(sub), -1) - vc[:, None])
    per = (vals @ QUAD7_WEIGHTS) * triangle_areas(sub)
    return float(np.sum(density.values * per.reshape(4**levels, m).sum(axis=0)))
