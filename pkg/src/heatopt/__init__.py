"""Space-time isogeometric solver for tracking-type optimal control of the heat equation."""

from .config import ConfigError, load_config, parse_config
from .estimator import HeatTrackingControl
from .kkt import (KKTSystem, ProblemConfig, SolutionFields, SolveReport, estimate_schur_condition,
                  evaluate_cost, sample_field, solve, solve_system)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "HeatTrackingControl",
    "KKTSystem",
    "ProblemConfig",
    "SolutionFields",
    "SolveReport",
    "estimate_schur_condition",
    "evaluate_cost",
    "load_config",
    "parse_config",
    "sample_field",
    "solve",
    "solve_system",
]
