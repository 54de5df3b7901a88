"""Public package API for stackwave."""

__version__ = "0.0.1"

from .config import ConfigError, ExperimentConfig, configure_experiment, load_config
from .discretization import Grid, NormKind, build_grid, norm
from .follower import FollowerProblem, FollowerSolution, solve_follower, solve_optimality_system
from .geometry import BoundaryProfile, Side, control_time_thresholds, validate_hypotheses
from .leader import (
    ControlTimeWarning,
    DualVariable,
    LeaderProblem,
    LeaderSolution,
    apply_A,
    apply_Astar,
    minimize_theta,
    recover_and_verify,
    solve_background,
    solve_leader,
    theta,
)
from .runtime import cancel_job, cancel_requested, raise_if_cancelled, run, run_ordered
from .wave_solver import BackwardProblem, ForwardProblem, solve_backward, solve_forward

__all__ = [
    "__version__",
    "ConfigError",
    "ExperimentConfig",
    "configure_experiment",
    "load_config",
    "Grid",
    "NormKind",
    "build_grid",
    "norm",
    "BoundaryProfile",
    "Side",
    "control_time_thresholds",
    "validate_hypotheses",
    "ForwardProblem",
    "BackwardProblem",
    "solve_forward",
    "solve_backward",
    "FollowerProblem",
    "FollowerSolution",
    "solve_follower",
    "solve_optimality_system",
    "LeaderProblem",
    "LeaderSolution",
    "DualVariable",
    "ControlTimeWarning",
    "solve_background",
    "apply_A",
    "apply_Astar",
    "theta",
    "minimize_theta",
    "recover_and_verify",
    "solve_leader",
    "run",
    "run_ordered",
    "cancel_job",
    "cancel_requested",
    "raise_if_cancelled",
]
