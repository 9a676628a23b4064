"""The outer splitting loop, initial parameterizations, mesh improvement and remeshing."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .beltrami_flow import (
    DualGraph,
    dual_dirichlet_energy,
    project_cap,
    shrink_l2,
    smooth,
)
from .errors import FoldOverError, TopologyError, ValidationError
from .locate import PointLocator
from .measure import FaceDensity, pushforward_density, relative_entropy
from .mesh import Embedding2D, TriMesh, triangle_areas
from .qc import (
    BeltramiField,
    Constraint,
    assemble,
    beltrami_of_corners,
    compute_beltrami,
    farthest_boundary_pair,
    lscm,
    solve_lbs,
)
from .torus import CutMesh, cut_torus, periodic_harmonic_map
from .transport import FlowParams, transport_apply

log = logging.getLogger(__name__)

EQUILATERAL = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]])
REPORT_FIELDS = ("iter", "H", "mu_l2_sq", "grad_mu_l2_sq", "E", "mu_max", "flips", "ms")


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class TargetDomain:
    """Planar target: ``disk`` (center, radius), ``rectangle`` (origin, width, height) or ``torus`` (lattice)."""

    kind: str = "disk"
    radius: float = 1.0
    center: tuple = (0.0, 0.0)
    width: float = 1.0
    height: float = 1.0
    origin: tuple = (0.0, 0.0)
    lattice: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        if self.kind not in ("disk", "rectangle", "torus"):
            raise ValidationError(f"unknown target domain {self.kind!r}")
        if self.kind == "disk" and not self.radius > 0:
            raise ValidationError("disk radius must be positive")
        if self.kind == "rectangle" and not (self.width > 0 and self.height > 0):
            raise ValidationError("rectangle sides must be positive")
        if self.kind == "torus":
            lat = np.asarray(self.lattice, dtype=float)
            if lat.shape != (2, 2) or abs(np.linalg.det(lat)) < 1e-14:
                raise ValidationError("torus lattice must be two non-parallel vectors")

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        for key in ("center", "origin"):
            if key in spec:
                spec[key] = tuple(float(x) for x in spec[key])
        if "lattice" in spec:
            spec["lattice"] = tuple(tuple(float(x) for x in row) for row in spec["lattice"])
        return cls(**spec)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Schedule:
    """Per-iteration flow parameters and stopping rule.

    ``params`` is a single :class:`FlowParams`, a sequence indexed by
    iteration (the last entry repeats) or a callable ``k -> FlowParams``
    with ``k`` starting at 1. ``patience=None`` disables early stopping.
    An iteration counts as stalled when ``E`` drops by at most
    ``stop_tol * |E_prev| + stop_atol``; the absolute part keeps the rule
    meaningful when ``E`` is at rounding level.
    """

    params: FlowParams | Sequence[FlowParams] | Callable = field(default_factory=FlowParams)
    max_iter: int = 50
    stop_tol: float = 1e-8
    stop_atol: float = 1e-12
    patience: int | None = 3
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.max_iter < 0:
            raise ValidationError("max_iter must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("energy weights must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValidationError("patience must be >= 1")

    def params_for(self, k):
        p = self.params
        if isinstance(p, FlowParams):
            return p
        if callable(p):
            return p(k)
        return p[min(k - 1, len(p) - 1)]


class EnergyReport:
    """Rows of per-iteration energies; row 0 describes the initial map."""

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def append(self, row):
        self.rows.append(dict(row))

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    @property
    def initial(self):
        return self.rows[0]

    @property
    def iterations(self):
        return self.rows[1:]


# -- state -----------------------------------------------------------------


@dataclass(frozen=True)
class DriverState:
    """Everything one outer iteration needs; replaced, never mutated."""

    mesh: TriMesh
    chart: Embedding2D
    embedding: Embedding2D
    source: FaceDensity
    reference: object
    mode: str
    graph: DualGraph
    boundary: Constraint | None = None
    cut: CutMesh | None = None

    @property
    def projection(self):
        return None if self.cut is None else self.cut.projection

    @property
    def frozen(self):
        if self.cut is not None:
            return None
        return self.embedding.mesh.is_boundary_vertex

    def constraint_for(self, embedding):
        """Constraint of the LBS solve that follows a transport step onto ``embedding``."""
        if self.mode == "dirichlet":
            return self.boundary
        if self.mode == "landmark":
            pins = self.boundary.vertices
            return Constraint.landmark(pins, embedding.positions[pins])
        anchor = int(self.cut.projection[0])
        return Constraint.periodic(self.cut, anchor, embedding.positions[0] - self.cut.offsets[0])

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def source_density(mesh, kind="area", values=None):
    """Probability density on the source surface.

    ``area`` (alias ``uniform``): constant with respect to surface area.
    ``file``/``values``: given positive per-face values, renormalized.
    """
    areas = mesh.face_areas
    if kind in ("area", "uniform"):
        return FaceDensity.uniform(areas)
    if kind in ("file", "values"):
        if values is None:
            raise ValidationError("per-face source density needs values")
        values = np.asarray(values, dtype=float).ravel()
        if len(values) != mesh.n_faces:
            raise ValidationError(
                f"source density has {len(values)} values for {mesh.n_faces} faces"
            )
        if not np.all(values > 0):
            raise ValidationError("source density values must be positive")
        return FaceDensity.normalized(values, areas)
    raise ValidationError(f"unknown source density kind {kind!r}")


# -- initial maps ------------------------------------------------------------


def _corner_angles(corners):
    c = np.asarray(corners, dtype=float)
    out = np.empty(c.shape[:2])
    for k in range(3):
        a = c[:, (k + 1) % 3] - c[:, k]
        b = c[:, (k + 2) % 3] - c[:, k]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    return out


def _angle_sums(mesh):
    ang = _corner_angles(mesh.corners())
    return np.bincount(mesh.faces.ravel(), weights=ang.ravel(), minlength=mesh.n_vertices)


def _boundary_arclength(mesh, loop):
    p = mesh.vertices[loop]
    seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    s = np.r_[0.0, np.cumsum(seg)[:-1]]
    return s, float(seg.sum())


def _rotate_loop(loop, start):
    i = int(np.flatnonzero(loop == start)[0])
    return np.roll(loop, -i)


def boundary_to_disk(mesh, domain):
    loop = mesh.boundary_loops[0]
    if mesh.dim == 2:
        # start at the boundary vertex with polar angle closest to zero
        c = np.asarray(domain.center)
        rel = mesh.vertices[loop] - mesh.vertices[loop].mean(axis=0)
        theta = np.arctan2(rel[:, 1], rel[:, 0])
        start = loop[np.argmin(np.abs(theta))]
        theta0 = float(theta[np.argmin(np.abs(theta))])
    else:
        sums = _angle_sums(mesh)
        start = loop[np.argmin(sums[loop])]
        theta0 = 0.0
        c = np.asarray(domain.center)
    loop = _rotate_loop(loop, start)
    s, total = _boundary_arclength(mesh, loop)
    ang = theta0 + 2 * np.pi * s / total
    return loop, c + domain.radius * np.column_stack([np.cos(ang), np.sin(ang)])


def boundary_to_rectangle(mesh, domain):
    loop = mesh.boundary_loops[0]
    sums = _angle_sums(mesh)
    w, h = domain.width, domain.height
    corner_pts = np.asarray(domain.origin) + np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=float)
    start = loop[np.argmin(sums[loop])]
    loop = _rotate_loop(loop, start)
    s, total = _boundary_arclength(mesh, loop)
    sharp = np.sort(np.argsort(sums[loop], kind="stable")[:4])
    if len(loop) >= 4 and np.all(sums[loop][sharp] <= 0.75 * np.pi) and sharp[0] == 0:
        corner_idx = list(sharp)
    else:
        perim = 2 * (w + h)
        fracs = np.array([0.0, w, w + h, 2 * w + h]) / perim
        corner_idx = [int(np.argmin(np.abs(s / total - f))) for f in fracs]
        if len(set(corner_idx)) < 4:
            raise ValidationError("boundary too coarse to map onto a rectangle")
    targets = np.empty((len(loop), 2))
    ends = corner_idx + [len(loop)]
    s_ext = np.r_[s, total]
    for k in range(4):
        i0, i1 = ends[k], ends[k + 1]
        a, b = corner_pts[k], corner_pts[(k + 1) % 4]
        frac = (s_ext[i0:i1] - s_ext[i0]) / (s_ext[i1] - s_ext[i0])
        targets[i0:i1] = a + frac[:, None] * (b - a)
    return loop, targets


def harmonic_map(mesh, loop, targets):
    """Cotangent harmonic extension of given boundary positions (``mu = 0`` Dirichlet solve)."""
    system = assemble(mesh, 0.0)
    return solve_lbs(system, Constraint.dirichlet(loop, targets))


def initial_map(mesh, target=None, mode="harmonic"):
    """``(chart, f0)`` for a disk-topology mesh.

    The chart is always the free-boundary least-squares conformal map, which
    fixes the conformal structure used to measure Beltrami coefficients.
    ``harmonic`` maps the boundary to the target by normalized arc length
    and extends harmonically; ``lscm`` uses the chart itself.
    """
    target = target or TargetDomain()
    if mesh.euler_characteristic != 1 or len(mesh.boundary_loops) != 1:
        raise TopologyError(
            "initial_map needs a disk-topology mesh",
            euler_characteristic=mesh.euler_characteristic,
            boundary_loops=len(mesh.boundary_loops),
        )
    chart = lscm(mesh)
    if chart.flipped_count:
        raise FoldOverError("conformal chart has fold-overs", flips=chart.flipped_count)
    if mode == "lscm":
        f0 = chart
    elif mode == "harmonic":
        if target.kind == "disk":
            loop, tgt = boundary_to_disk(mesh, target)
        elif target.kind == "rectangle":
            loop, tgt = boundary_to_rectangle(mesh, target)
        else:
            raise ValidationError("torus targets need a closed genus-1 mesh")
        f0 = harmonic_map(mesh, loop, tgt)
    else:
        raise ValidationError(f"unknown initial map mode {mode!r}")
    flips = f0.flipped_count
    if flips:
        raise FoldOverError(f"initial map has {flips} flipped faces", flips=flips)
    return chart, f0


# -- energies ----------------------------------------------------------------


def evaluate_map(embedding, chart, source, reference, graph, alpha=1.0, beta=1.0):
    """Energy terms of a map; ``H`` is NaN when the map folds over."""
    flips = embedding.flipped_count
    mu = BeltramiField(beltrami_of_corners(chart.corners, embedding.corners))
    if flips == 0:
        H = relative_entropy(pushforward_density(source, embedding), embedding, reference)
    else:
        H = float("nan")
    mu_l2 = mu.l2_sq(triangle_areas(chart.corners))
    grad = dual_dirichlet_energy(graph, mu)
    return {
        "H": H,
        "mu_l2_sq": mu_l2,
        "grad_mu_l2_sq": grad,
        "E": H + alpha * mu_l2 + beta * grad,
        "mu_max": mu.max_abs,
        "flips": int(flips),
    }


def make_state(mesh, chart, f0, source, reference, mode="dirichlet", cut=None, pins=None,
               normalize=True):
    """Assemble a :class:`DriverState`; the reference is normalized over ``f0``'s image."""
    if normalize:
        reference = reference.normalized(f0.corners)
    if cut is not None:
        graph = DualGraph.from_geometry(cut.closed, chart.corners)
        boundary = None
        mode = "periodic"
    else:
        graph = DualGraph.from_geometry(mesh, chart.corners)
        if mode == "dirichlet":
            boundary = Constraint.boundary_of(f0)
        elif mode == "landmark":
            pins = farthest_boundary_pair(mesh) if pins is None else pins
            boundary = Constraint.landmark(pins, f0.positions[list(pins)])
        else:
            raise ValidationError(f"unknown constraint mode {mode!r}")
    return DriverState(mesh, chart, f0, source, reference, mode, graph, boundary, cut)


# -- the splitting loop --------------------------------------------------------


@dataclass
class IterationInfo:
    transport_completed: bool = True
    substeps: int = 0
    backtracks: int = 0
    fallback: bool = False
    lbs_flips: int = 0
    lbs_residual: float = 0.0


def run_iteration(state, params, alpha=1.0, beta=1.0, on_substep=None):
    """One outer iteration: transport, measure, cap, shrink, smooth, cap, solve.

    Returns ``(new_state, row, info)``. If the least-squares solve folds
    over, the transported map is kept for this iteration.
    """
    t0 = time.perf_counter()
    tr = transport_apply(
        state.embedding, state.source, state.reference, params.t1, params,
        projection=state.projection, frozen=state.frozen, on_substep=on_substep,
    )
    g = tr.embedding
    info = IterationInfo(tr.completed, tr.substeps, tr.backtracks)
    mu = compute_beltrami(g, state.chart)
    mu = project_cap(mu, params.cap_k)
    mu = shrink_l2(mu, params.t2)
    mu = smooth(mu, params.t3, params.tau_smooth, state.graph)
    mu = project_cap(mu, params.cap_k)
    system = assemble(state.chart, mu)
    f, solve = solve_lbs(system, state.constraint_for(g), return_info=True)
    info.lbs_residual = solve.residual
    info.lbs_flips = f.flipped_count
    if info.lbs_flips:
        log.info("LBS output has %d flipped faces; keeping the transported map", info.lbs_flips)
        info.fallback = True
        f = g
    row = evaluate_map(f, state.chart, state.source, state.reference, state.graph, alpha, beta)
    row["ms"] = 1000.0 * (time.perf_counter() - t0)
    return state.replace(embedding=f), row, info


@dataclass
class RunResult:
    embedding: Embedding2D
    report: EnergyReport
    best_iter: int
    state: DriverState
    last: Embedding2D
    infos: list = field(default_factory=list)


def run(state, schedule, *, on_iteration=None, on_substep=None, checkpoint_dir=None):
    """Iterate :func:`run_iteration` and return the lowest-energy iterate.

    Stops after ``schedule.max_iter`` iterations or once ``E`` has failed to
    drop by more than ``stop_tol`` (relative) ``patience`` times in a row.
    ``on_iteration(k, state, row, info)`` observes every accepted iterate.
    """
    report = EnergyReport()
    row0 = evaluate_map(state.embedding, state.chart, state.source, state.reference,
                        state.graph, schedule.alpha, schedule.beta)
    row0.update(iter=0, ms=0.0)
    report.append(row0)
    best_E, best_iter, best = row0["E"], 0, state.embedding
    prev_E = row0["E"]
    stall = 0
    infos = []
    for k in range(1, schedule.max_iter + 1):
        params = schedule.params_for(k)
        state, row, info = run_iteration(state, params, schedule.alpha, schedule.beta, on_substep)
        row = {"iter": k, **row}
        report.append(row)
        infos.append(info)
        if on_iteration is not None:
            on_iteration(k, state, row, info)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, k, state)
        log.info("iter %3d  H=%.6g  |mu|^2=%.4g  E=%.6g  flips=%d", k, row["H"],
                 row["mu_l2_sq"], row["E"], row["flips"])
        if row["E"] < best_E:
            best_E, best_iter, best = row["E"], k, state.embedding
        if not prev_E - row["E"] > schedule.stop_tol * abs(prev_E) + schedule.stop_atol:
            stall += 1
        else:
            stall = 0
        prev_E = row["E"]
        if schedule.patience is not None and stall >= schedule.patience:
            log.info("energy stalled for %d iterations; stopping at %d", stall, k)
            break
        if not info.transport_completed:
            log.warning("transport could not complete without fold-overs; stopping")
            break
    return RunResult(best, report, best_iter, state.replace(embedding=best), state.embedding, infos)


def save_checkpoint(directory, k, state):
    """Write positions, Beltrami field and source density of iterate ``k``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mu = compute_beltrami(state.embedding, state.chart).values
    np.savez(d / f"iter_{k:04d}.npz", positions=state.embedding.positions,
             faces=state.mesh.faces, mu=mu, source=state.source.values)


def load_checkpoint(path, state):
    """Resume: a copy of ``state`` with positions read from a checkpoint file."""
    data = np.load(path)
    if not np.array_equal(data["faces"], state.embedding.mesh.faces):
        raise ValidationError("checkpoint connectivity does not match the state")
    return state.replace(embedding=Embedding2D(state.embedding.mesh, data["positions"]))


# -- mesh improvement ----------------------------------------------------------


def equilateral_beltrami(chart):
    """Per-face Beltrami coefficient of the affine map onto an equilateral triangle."""
    tgt = np.broadcast_to(EQUILATERAL, chart.corners.shape)
    return BeltramiField(beltrami_of_corners(chart.corners, tgt))


def improve_mesh(mesh, pins=None):
    """Planar mesh whose triangles are closer to equilateral.

    Solves the landmark LBS with the equilateral Beltrami field, pinning the
    two most distant boundary vertices where they are.
    """
    if mesh.dim != 2:
        raise ValidationError("improve_mesh expects a planar mesh")
    chart = Embedding2D(mesh, mesh.vertices)
    mu = equilateral_beltrami(chart)
    pins = farthest_boundary_pair(mesh) if pins is None else pins
    out = solve_lbs(assemble(chart, mu), Constraint.landmark(pins, mesh.vertices[list(pins)]))
    if out.flipped_count:
        raise FoldOverError("improved mesh has fold-overs", flips=out.flipped_count)
    return out.as_mesh()


# -- genus one --------------------------------------------------------------------


def genus1_setup(mesh, reference, source=None, lattice=((1.0, 0.0), (0.0, 1.0))):
    """Cut a torus and build the periodic state (chart = initial periodic harmonic map)."""
    cut = cut_torus(mesh, lattice)
    pos = periodic_harmonic_map(cut)
    chart = Embedding2D(cut.open_mesh, pos)
    if chart.flipped_count:
        raise FoldOverError("periodic harmonic map has fold-overs", flips=chart.flipped_count)
    if source is None:
        source = source_density(mesh)
    return make_state(cut.open_mesh, chart, chart, source, reference, cut=cut)


def genus1_run(mesh, reference, schedule, source=None, lattice=((1.0, 0.0), (0.0, 1.0)), **kw):
    state = genus1_setup(mesh, reference, source, lattice)
    return run(state, schedule, **kw)


def periodicity_defect(cut, embedding):
    """Max over identified vertices of ``|f(v1) - f(v2) - (offset1 - offset2)|``."""
    X = embedding.positions - cut.offsets
    worst = 0.0
    for group in cut.identified_groups():
        if len(group) > 1:
            worst = max(worst, float(np.abs(X[group] - X[group[0]]).max()))
    return worst


# -- remeshing --------------------------------------------------------------------


def compose_remesh(f1, new_mesh, tol=1e-10):
    """Lift a mesh drawn in the parameter domain back onto the surface.

    ``f1`` maps the surface mesh (its ``mesh.vertices`` are the surface
    positions) to the plane; every vertex of ``new_mesh`` is located in the
    image and interpolated barycentrically.
    """
    locator = PointLocator(f1, tol=tol)
    faces, bary = locator.locate_many(np.asarray(new_mesh.vertices)[:, :2])
    surf = f1.mesh.vertices[f1.mesh.faces[faces]]
    pts = np.einsum("ij,ijk->ik", bary, surf)
    return TriMesh(pts, new_mesh.faces, validate=False)
