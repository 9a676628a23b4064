"""Bijective planar parameterization of triangle meshes by alternating
Fokker-Planck transport with quasiconformal (Beltrami) corrections."""

__version__ = "0.1.0"

from .beltrami_flow import (
    DualGraph,
    dual_dirichlet_energy,
    dual_laplacian,
    project_cap,
    shrink_l2,
    smooth,
    stability_bound,
)
from .driver import (
    EnergyReport,
    Schedule,
    TargetDomain,
    compose_remesh,
    equilateral_beltrami,
    genus1_run,
    genus1_setup,
    improve_mesh,
    initial_map,
    make_state,
    run,
    run_iteration,
    source_density,
)
from .errors import QCParamError
from .locate import PointLocator, locate_point
from .measure import (
    FaceDensity,
    ReferenceDensity,
    pushforward_density,
    relative_entropy,
    vertex_density,
    vertex_density_gradient,
)
from .mesh import Embedding2D, TriMesh, face_area, orientation_report, pl_gradient
from .meshio import load_mesh, save_mesh
from .qc import (
    AssembledSystem,
    BeltramiField,
    Constraint,
    assemble,
    compute_beltrami,
    dilation_matrix,
    lscm,
    solve_lbs,
)
from .torus import CutMesh, cut_torus
from .transport import FlowParams, transport_apply, velocity_field

__all__ = [
    "__version__",
    "AssembledSystem",
    "BeltramiField",
    "Constraint",
    "CutMesh",
    "DualGraph",
    "Embedding2D",
    "EnergyReport",
    "FaceDensity",
    "FlowParams",
    "PointLocator",
    "QCParamError",
    "ReferenceDensity",
    "Schedule",
    "TargetDomain",
    "TriMesh",
    "assemble",
    "compose_remesh",
    "compute_beltrami",
    "cut_torus",
    "dilation_matrix",
    "dual_dirichlet_energy",
    "dual_laplacian",
    "equilateral_beltrami",
    "face_area",
    "genus1_run",
    "genus1_setup",
    "improve_mesh",
    "initial_map",
    "load_mesh",
    "locate_point",
    "lscm",
    "make_state",
    "orientation_report",
    "pl_gradient",
    "project_cap",
    "pushforward_density",
    "relative_entropy",
    "run",
    "run_iteration",
    "save_mesh",
    "shrink_l2",
    "smooth",
    "solve_lbs",
    "source_density",
    "stability_bound",
    "transport_apply",
    "velocity_field",
    "vertex_density",
    "vertex_density_gradient",
]
