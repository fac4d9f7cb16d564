"""
obstacle_flow Package
Obstacle problems, equilibrium measures and the first- and second-order response of
their free boundaries to perturbations of the obstacle
"""

__version__ = "0.1.0"

from .runtime_config import FrameSettings, RuntimeSettings, SolverSettings, ThetaSettings
from .logging_config import configure_logging, get_logger
from .exceptions import ObstacleFlowError, ValidationError
from .geometry import (
    Curve, Grid2D, RegionMask, ScalarField, TransversalFrame, build_frame,
    extract_free_boundary, height_function, intersect_transversals,
)
from .layerpot import (
    LayerDensity, double_layer, newtonian_potential, single_layer, single_layer_trace,
    volume_potential, volume_potential_grid,
)
from .obstacle import (
    ObstacleProblem, ObstacleSolution, monotonicity_holds, ordering_holds, solve_equilibrium_measure,
    solve_obstacle, verify_complementarity,
)
from .perturb import (
    PerturbationPath, assemble_w_parts, monotone_decomposition, normal_velocity, solve_theta,
    solve_velocity_potential, verify_expansion,
)
from .catalog import get_catalog
from .cli import Scenario, convergence_study, run_scenario
from .reporting import Report, render_svg

__all__ = [
    # Configuration and logging
    "FrameSettings",
    "RuntimeSettings",
    "SolverSettings",
    "ThetaSettings",
    "configure_logging",
    "get_logger",

    # Exceptions
    "ObstacleFlowError",
    "ValidationError",

    # Geometry
    "Curve",
    "Grid2D",
    "RegionMask",
    "ScalarField",
    "TransversalFrame",
    "build_frame",
    "extract_free_boundary",
    "height_function",
    "intersect_transversals",

    # Layer potentials
    "LayerDensity",
    "double_layer",
    "newtonian_potential",
    "single_layer",
    "single_layer_trace",
    "volume_potential",
    "volume_potential_grid",

    # Obstacle problem
    "ObstacleProblem",
    "ObstacleSolution",
    "monotonicity_holds",
    "ordering_holds",
    "solve_equilibrium_measure",
    "solve_obstacle",
    "verify_complementarity",

    # Perturbations
    "PerturbationPath",
    "assemble_w_parts",
    "monotone_decomposition",
    "normal_velocity",
    "solve_theta",
    "solve_velocity_potential",
    "verify_expansion",

    # Scenarios
    "Report",
    "Scenario",
    "convergence_study",
    "get_catalog",
    "render_svg",
    "run_scenario",
]
