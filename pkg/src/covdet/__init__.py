"""Covariance-based device activity detection for multi-cell massive MIMO."""
from .kernels import BACKEND, NumericalFailure
from .metrics import equal_error_probability, pm_pf, threshold_grid
from .solver_core import SolverState, gradient, objective, optimality_violation
from .solvers import SolverConfig, Solution, detect, make_config, run_cd
from .system_model import SystemInstance, make_instance, simulate_received

__version__ = "0.1.0"

__all__ = ["BACKEND", "NumericalFailure", "SolverState", "SolverConfig", "Solution", "SystemInstance", "detect",
           "equal_error_probability", "gradient", "make_config", "make_instance", "objective",
           "optimality_violation", "pm_pf", "run_cd", "simulate_received", "threshold_grid"]
