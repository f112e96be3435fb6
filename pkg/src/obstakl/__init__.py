"""Finite element solvers for classical, thin and spectral fractional
obstacle problems, with free-boundary extraction and convergence studies."""

from .mesh import (CylinderMesh, GradedPartition, MeshError, SimplicialMesh,
                   cylinder_mesh, graded_partition, is_weakly_acute,
                   structured_triangle_mesh, uniform_interval_mesh)
from .assembly import (AssemblyError, FeSpace, assemble_load,
                       assemble_mass_plus_stiffness, assemble_stiffness,
                       assemble_weighted_stiffness, energy_norm_error,
                       extension_constant, interpolate_nodal)
from .vi_solver import (InputError, NonConvergenceError, ObstacleSystem, ViSolution,
                        kkt_report, solve_brute_force, solve_pdas, solve_psor)
from .classical import (benchmark_1d, benchmark_2d, delta_for_level,
                        extract_free_boundary, interface_metrics, solve_classical)
from .thin import ThinProblem, signorini_report, solve_thin
from .fractional import (FractionalConfig, choose_truncation, decay_profile,
                         solve_fractional_linear, solve_fractional_obstacle,
                         truncation_error_probe)
from .harness import ConvergenceRecord, StudySpec, fit_rate, run_study

__all__ = [
    "CylinderMesh",
    "GradedPartition",
    "MeshError",
    "SimplicialMesh",
    "cylinder_mesh",
    "graded_partition",
    "is_weakly_acute",
    "structured_triangle_mesh",
    "uniform_interval_mesh",
    "AssemblyError",
    "FeSpace",
    "assemble_load",
    "assemble_mass_plus_stiffness",
    "assemble_stiffness",
    "assemble_weighted_stiffness",
    "energy_norm_error",
    "extension_constant",
    "interpolate_nodal",
    "InputError",
    "NonConvergenceError",
    "ObstacleSystem",
    "ViSolution",
    "kkt_report",
    "solve_brute_force",
    "solve_pdas",
    "solve_psor",
    "benchmark_1d",
    "benchmark_2d",
    "delta_for_level",
    "extract_free_boundary",
    "interface_metrics",
    "solve_classical",
    "ThinProblem",
    "signorini_report",
    "solve_thin",
    "FractionalConfig",
    "choose_truncation",
    "decay_profile",
    "solve_fractional_linear",
    "solve_fractional_obstacle",
    "truncation_error_probe",
    "ConvergenceRecord",
    "StudySpec",
    "fit_rate",
    "run_study",
]

__version__ = "0.1.0"
