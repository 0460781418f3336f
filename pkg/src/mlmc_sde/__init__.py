"""Multilevel Monte Carlo for SDEs with superlinearly growing coefficients.

Explicit, tamed and implicit Euler schemes, plain and multilevel Monte Carlo
estimators with reproducible per-sample random streams, reference values for
the test problems and diagnostics of where MLMC Euler blows up.
"""

from .diagnostics import InitialArray, LevelStats, compute_level_stats, explosion_predicate
from .estimators import EstimatorReport, mlmc, monte_carlo_euler, rmse_curve
from .experiments import ExperimentConfig, run_experiment
from .problems import Payoff, SdeProblem, build_problem
from .schemes import Scheme

__version__ = "0.1.0"

__all__ = [
    "EstimatorReport",
    "ExperimentConfig",
    "InitialArray",
    "LevelStats",
    "Payoff",
    "Scheme",
    "SdeProblem",
    "build_problem",
    "compute_level_stats",
    "explosion_predicate",
    "mlmc",
    "monte_carlo_euler",
    "rmse_curve",
    "run_experiment",
]
