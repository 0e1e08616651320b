"""Space-time CutFEM for convection-diffusion on moving 1D domains.

Discontinuous Galerkin in time, continuous elements in space on an unfitted
background mesh, isoparametric geometry mapping, direct ghost penalty, and
four treatments of the total concentration (plain, mass conserving,
constrained, penalty).
"""

from .errors import (DegenerateLevelSetError, EmptyDomainError, GeometryError, SingularSystemError,
                     StCutFemError)
from .levelset import PROBLEMS, ProblemData, get_problem
from .meshtime import BackgroundMesh, TimePartition, build_mesh, build_time_partition
from .norms import NormReport, compute_norms, eoc, error_vs_exact
from .solver import MeanTrack, SlabSolution, SolveConfig, SolveResult, Variant, penalty_sweep, solve

__version__ = "0.1.0"

__all__ = [
    "BackgroundMesh", "DegenerateLevelSetError", "EmptyDomainError", "GeometryError", "MeanTrack",
    "NormReport", "PROBLEMS", "ProblemData", "SingularSystemError", "SlabSolution", "SolveConfig",
    "SolveResult", "StCutFemError", "TimePartition", "Variant", "build_mesh", "build_time_partition",
    "compute_norms", "eoc", "error_vs_exact", "get_problem", "penalty_sweep", "solve",
]
