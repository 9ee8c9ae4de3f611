"""Multi-level inexact ADMM for elliptic optimal control with box
constraints on the control, discretized by P1 finite elements."""

__version__ = "0.1.0"

from .admm import (IterateState, ResidualReport, RunRecord, SolverConfig,
                   default_level_schedule, kkt_residuals, lambda_update, run,
                   run_classical, run_inexact, run_madmm, z_update)
from .fem import AssembledLevel, DofMap, assemble, interpolate_nodal, l2_error
from .mesh import (MeshHierarchy, TriangleMesh, prolongation, refine_uniform,
                   unit_disk_mesh, unit_square_mesh)
from .problems import ProblemSpec, example1, example2, reference_solution

__all__ = [
    "AssembledLevel", "DofMap", "IterateState", "MeshHierarchy", "ProblemSpec",
    "ResidualReport", "RunRecord", "SolverConfig", "TriangleMesh", "assemble",
    "default_level_schedule", "example1", "example2", "interpolate_nodal",
    "kkt_residuals", "l2_error", "lambda_update", "prolongation", "reference_solution",
    "refine_uniform", "run", "run_classical", "run_inexact", "run_madmm",
    "unit_disk_mesh", "unit_square_mesh", "z_update",
]
