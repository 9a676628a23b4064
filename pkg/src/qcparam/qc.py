"""Beltrami coefficients, the generalized Laplacian and the linear Beltrami solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BeltramiRangeError,
    ConvergenceError,
    SingularSystemError,
    ValidationError,
)
from .mesh import Embedding2D, TriMesh, gradient_operator, local_frames, signed_areas

log = logging.getLogger(__name__)

CG_RTOL = 1e-10


@dataclass(frozen=True)
class BeltramiField:
    """One complex coefficient per face.

    Fields measured from a map may reach ``|mu| >= 1`` on flipped faces;
    ``flagged`` marks them and such fields must be capped before solving.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    @property
    def magnitude(self):
        return np.abs(self.values)

    @property
    def max_abs(self):
        return float(self.magnitude.max()) if len(self.values) else 0.0

    @property
    def flagged(self):
        return self.magnitude >= 1.0

    @property
    def dilatation(self):
        """``K = (1 + |mu|) / (1 - |mu|)`` per face."""
        m = self.magnitude
        with np.errstate(divide="ignore"):
            return (1 + m) / (1 - m)

    def l2_sq(self, areas):
        return float(np.sum(np.asarray(areas) * self.magnitude**2))

    @classmethod
    def zeros(cls, n_faces):
        return cls(np.zeros(n_faces, dtype=complex))


def _face_corners(chart):
    """Planar per-face corners of a chart: an embedding, a mesh or a corner array."""
    if isinstance(chart, Embedding2D):
        return chart.corners
    if isinstance(chart, TriMesh):
        return local_frames(chart.corners())
    return np.asarray(chart, dtype=float)


def wirtinger(chart_corners, image_corners):
    """``(f_z, f_zbar)`` of the affine maps between corresponding triangles."""
    G = gradient_operator(chart_corners)
    gu = np.einsum("...ij,...j->...i", G, image_corners[..., 0])
    gv = np.einsum("...ij,...j->...i", G, image_corners[..., 1])
    ux, uy, vx, vy = gu[..., 0], gu[..., 1], gv[..., 0], gv[..., 1]
    fz = 0.5 * ((ux + vy) + 1j * (vx - uy))
    fzb = 0.5 * ((ux - vy) + 1j * (vx + uy))
    return fz, fzb


def beltrami_of_corners(chart_corners, image_corners):
    """``f_zbar / f_z`` per face.

    Anti-conformal faces (``f_z = 0``, e.g. a mirror image) get ``mu = inf``
    and are flagged; a face collapsed to a point has no coefficient at all.
    """
    fz, fzb = wirtinger(chart_corners, image_corners)
    scale = np.abs(fz) + np.abs(fzb)
    img = np.asarray(image_corners, dtype=float)
    diam = np.abs(img - img[..., :1, :]).max(axis=(-2, -1))
    extent = float(np.ptp(img.reshape(-1, 2), axis=0).max()) if img.size else 0.0
    collapsed = diam <= 1e-14 * extent
    if np.any(collapsed):
        raise BeltramiRangeError(
            "image face collapsed to a point", faces=np.flatnonzero(collapsed)[:10]
        )
    anti = np.abs(fz) <= 1e-14 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = fzb / fz
    mu[anti] = np.inf
    return mu


def compute_beltrami(embedding, chart):
    """Beltrami coefficient ``f_zbar / f_z`` of the PL map ``chart -> embedding``."""
    if embedding.mesh.n_faces != chart.mesh.n_faces:
        raise ValidationError("map and chart have different connectivity")
    return BeltramiField(beltrami_of_corners(chart.corners, embedding.corners))


def dilation_matrix(mu):
    """Symmetric positive definite matrix ``A(mu)`` with unit determinant.

    Vectorised: ``mu`` of shape ``s`` gives an array of shape ``s + (2, 2)``.
    """
    mu = np.asarray(mu, dtype=complex)
    mag2 = np.abs(mu) ** 2
    if np.any(mag2 >= 1.0):
        raise BeltramiRangeError("dilation matrix needs |mu| < 1", max_abs=float(np.sqrt(mag2.max())))
    r, t = mu.real, mu.imag
    s = 1.0 / (1.0 - mag2)
    A = np.empty(mu.shape + (2, 2))
    A[..., 0, 0] = s * ((r - 1) ** 2 + t**2)
    A[..., 0, 1] = A[..., 1, 0] = -2 * s * t
    A[..., 1, 1] = s * ((1 + r) ** 2 + t**2)
    return A


def area_matrix(mesh):
    """Skew-symmetric ``U`` with ``2 u^T U v`` the signed area enclosed by the image boundary.

    Edge-based: each boundary half-edge ``a -> b`` contributes ``+1/4`` at
    ``(a, b)`` and ``-1/4`` at ``(b, a)``.
    """
    bh = mesh.boundary_halfedges
    a = mesh.halfedge_src[bh]
    b = mesh.halfedge_dst[bh]
    n = mesh.n_vertices
    return sp.coo_matrix(
        (np.r_[np.full(len(a), 0.25), np.full(len(a), -0.25)], (np.r_[a, b], np.r_[b, a])),
        shape=(n, n),
    ).tocsr()


@dataclass(frozen=True)
class AssembledSystem:
    """Generalized Laplacian ``L``, area matrix ``U`` and ``M = [[L, -2U], [2U, L]]``.

    ``x^T M x`` with ``x = [u; v]`` is twice the least-squares quasiconformal
    energy: the anisotropic Dirichlet energy minus twice the image area.
    """

    mesh: TriMesh
    L: sp.csr_matrix
    U: sp.csr_matrix
    mu: BeltramiField
    face_areas: np.ndarray = field(repr=False)

    @property
    def M(self):
        L, U = self.L, self.U
        return sp.bmat([[L, -2.0 * U], [2.0 * U, L]], format="csr")

    @property
    def n_vertices(self):
        return self.mesh.n_vertices


def assemble(chart, mu, mesh=None):
    """Assemble ``L_mu``, ``U`` and ``M`` on the chart's conformal structure.

    ``chart`` is a planar :class:`Embedding2D`, or a :class:`TriMesh` whose
    faces are flattened isometrically one at a time.
    """
    if mesh is None:
        mesh = chart.mesh if isinstance(chart, Embedding2D) else chart
    corners = _face_corners(chart)
    if not isinstance(mu, BeltramiField):
        mu = np.asarray(mu, dtype=complex)
        mu = BeltramiField(np.full(mesh.n_faces, mu) if mu.ndim == 0 else mu)
    if len(mu) != mesh.n_faces:
        raise ValidationError("Beltrami field length does not match face count")
    area = signed_areas(corners)
    if np.any(area <= 0):
        raise ValidationError("chart has flipped or degenerate faces",
                              faces=np.flatnonzero(area <= 0)[:10])
    A = dilation_matrix(mu.values)
    G = gradient_operator(corners)
    K = area[:, None, None] * np.einsum("fki,fkl,flj->fij", G, A, G)
    f = mesh.faces
    rows = np.repeat(f, 3, axis=1).ravel()
    cols = np.tile(f, (1, 3)).ravel()
    n = mesh.n_vertices
    L = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    L = 0.5 * (L + L.T)
    return AssembledSystem(mesh, L.tocsr(), area_matrix(mesh), mu, area)


@dataclass(frozen=True)
class Constraint:
    """Boundary condition of the linear Beltrami solve.

    ``landmark``: ``vertices`` pinned at ``targets`` (at least two).
    ``dirichlet``: every boundary vertex pinned.
    ``periodic``: ``projection``/``offsets`` of a cut torus plus one anchor.
    """

    mode: str
    vertices: np.ndarray
    targets: np.ndarray
    projection: np.ndarray | None = None
    offsets: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("landmark", "dirichlet", "periodic"):
            raise ValidationError(f"unknown constraint mode {self.mode!r}")
        v = np.asarray(self.vertices, dtype=np.int64).ravel()
        t = np.asarray(self.targets, dtype=float).reshape(len(v), 2)
        if len(np.unique(v)) != len(v):
            raise ValidationError("constraint vertices must be distinct")
        if self.mode == "landmark" and len(v) < 2:
            raise ValidationError("landmark mode needs at least 2 pins")
        if self.mode == "periodic" and (self.projection is None or self.offsets is None):
            raise ValidationError("periodic mode needs projection and offsets")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "targets", t)

    @classmethod
    def landmark(cls, vertices, targets):
        return cls("landmark", vertices, targets)

    @classmethod
    def dirichlet(cls, vertices, targets):
        return cls("dirichlet", vertices, targets)

    @classmethod
    def boundary_of(cls, embedding):
        """Dirichlet constraint holding every boundary vertex where ``embedding`` puts it."""
        b = embedding.mesh.boundary_vertices
        return cls("dirichlet", b, embedding.positions[b])

    @classmethod
    def periodic(cls, cut, anchor=0, anchor_position=None):
        """Identifications of a :class:`CutMesh`; ``anchor`` is a closed-mesh vertex."""
        if anchor_position is None:
            anchor_position = np.zeros(2)
        return cls("periodic", [anchor], [anchor_position],
                   projection=np.asarray(cut.projection), offsets=np.asarray(cut.offsets))

    def check(self, mesh):
        if np.any(self.vertices < 0) or np.any(self.vertices >= mesh.n_vertices):
            if self.mode != "periodic":
                raise ValidationError("constraint vertex out of range")
        if self.mode == "dirichlet":
            missing = np.setdiff1d(mesh.boundary_vertices, self.vertices)
            if len(missing):
                raise ValidationError("dirichlet constraint does not cover the boundary",
                                      missing=missing[:10])
        if self.mode == "periodic" and len(self.projection) != mesh.n_vertices:
            raise ValidationError("periodic projection does not match the mesh")


@dataclass
class SolveInfo:
    residual: float
    method: str


def _solve_spd(A, b, method="auto"):
    """Solve ``A x = b`` (columns of ``b`` independently).

    ``auto`` uses a sparse LU factorization and falls back to Jacobi
    preconditioned conjugate gradients if the factorization fails.
    """
    A = A.tocsc()
    b = np.asarray(b, dtype=float)
    b2 = b.reshape(len(b), -1)
    n = A.shape[0]
    if method in ("auto", "direct"):
        try:
            lu = spla.splu(A)
            x = lu.solve(b2)
            if np.all(np.isfinite(x)):
                return x.reshape(b.shape), "direct"
        except RuntimeError as exc:
            if method == "direct":
                raise SingularSystemError(f"factorization failed: {exc}") from exc
            log.info("sparse factorization failed (%s); falling back to CG", exc)
        if method == "direct":
            raise SingularSystemError("factorization produced non-finite values")
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SingularSystemError("system matrix has a non-positive diagonal")
    pre = sp.diags(1.0 / diag)
    out = np.empty_like(b2)
    for c in range(b2.shape[1]):
        x, info = spla.cg(A, b2[:, c], rtol=CG_RTOL, atol=0.0, maxiter=10 * n, M=pre)
        if info != 0:
            raise ConvergenceError(f"CG did not converge in {10 * n} iterations", info=info)
        out[:, c] = x
    return out.reshape(b.shape), "cg"


def solve_lbs(system, constraint, method="auto", return_info=False):
    """Least-squares quasiconformal map for the assembled Beltrami field.

    ``dirichlet`` solves the two decoupled systems ``L_II x_I = -L_IB x_B``;
    ``landmark`` solves the coupled system of ``M`` with pinned rows removed;
    ``periodic`` solves ``P^T L (P X + offsets) = 0`` on the closed mesh with
    one anchor vertex fixed and lifts the result.
    """
    mesh = system.mesh
    constraint.check(mesh)
    n = mesh.n_vertices
    L = system.L
    pos = np.zeros((n, 2))
    if constraint.mode == "dirichlet":
        fixed = np.zeros(n, dtype=bool)
        fixed[constraint.vertices] = True
        pos[constraint.vertices] = constraint.targets
        free = ~fixed
        A = L[free][:, free]
        rhs = -(L[free][:, fixed] @ pos[fixed])
        if A.shape[0]:
            pos[free], how = _solve_spd(A, rhs, method)
        else:
            how = "none"
        res_mat, res_rhs, res_x = A, rhs, pos[free]
    elif constraint.mode == "landmark":
        M = system.M
        fixed = np.zeros(2 * n, dtype=bool)
        fixed[constraint.vertices] = True
        fixed[constraint.vertices + n] = True
        x = np.zeros(2 * n)
        x[constraint.vertices] = constraint.targets[:, 0]
        x[constraint.vertices + n] = constraint.targets[:, 1]
        free = ~fixed
        A = M[free][:, free]
        rhs = -(M[free][:, fixed] @ x[fixed])
        x[free], how = _solve_spd(A, rhs, method)
        pos = np.column_stack([x[:n], x[n:]])
        res_mat, res_rhs, res_x = A, rhs, x[free]
    else:
        proj = constraint.projection
        off = constraint.offsets
        nc = int(proj.max()) + 1
        P = sp.csr_matrix((np.ones(n), (np.arange(n), proj)), shape=(n, nc))
        Lr = (P.T @ L @ P).tocsr()
        rhs_all = -(P.T @ (L @ off))
        X = np.zeros((nc, 2))
        fixed = np.zeros(nc, dtype=bool)
        fixed[constraint.vertices] = True
        X[constraint.vertices] = constraint.targets
        free = ~fixed
        A = Lr[free][:, free]
        rhs = rhs_all[free] - Lr[free][:, fixed] @ X[fixed]
        X[free], how = _solve_spd(A, rhs, method)
        pos = X[proj] + off
        res_mat, res_rhs, res_x = A, rhs, X[free]
    if res_mat.shape[0]:
        r = res_mat @ res_x - res_rhs
        scale = max(float(np.linalg.norm(res_rhs)), 1e-300)
        residual = float(np.linalg.norm(r)) / scale
    else:
        residual = 0.0
    if not np.all(np.isfinite(pos)):
        raise SingularSystemError("linear Beltrami solve produced non-finite positions")
    log.debug("solve_lbs[%s/%s] relative residual %.3g", constraint.mode, how, residual)
    emb = Embedding2D(mesh, pos)
    if return_info:
        return emb, SolveInfo(residual, how)
    return emb


def farthest_boundary_pair(mesh, positions=None):
    """The two boundary vertices farthest apart (ties broken by index)."""
    pos = mesh.vertices if positions is None else np.asarray(positions)
    b = mesh.boundary_vertices
    if len(b) < 2:
        raise ValidationError("mesh needs at least two boundary vertices")
    p = pos[b]
    d2 = np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1)
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    i, j = sorted((int(i), int(j)))
    return int(b[i]), int(b[j])


def lscm(mesh, pins=None, targets=((0.0, 0.0), (1.0, 0.0)), mu=None, chart=None, method="auto"):
    """Free-boundary least-squares (quasi)conformal map with two pinned vertices.

    Defaults to ``mu = 0`` on the mesh's own (flattened per face) geometry and
    pins the two most distant boundary vertices at ``(0,0)`` and ``(1,0)``.
    """
    if pins is None:
        pins = farthest_boundary_pair(mesh)
    system = assemble(mesh if chart is None else chart, 0.0 if mu is None else mu, mesh=mesh)
    return solve_lbs(system, Constraint.landmark(pins, targets), method=method)
