"""Kernel methods for identifying and forecasting Hamiltonian systems from sparse trajectories."""

from .kernels import FunctionalLayout, KernelSpec
from .linalg import RegularizedSystem, SingularSystemError, solve_ridge
from .two_step import LearnedHamiltonian, Ridges, fit_two_step
from .one_step import OneStepOptions, OneStepProblem, SlackVariables, fit_one_step
from .dynamics import IntegratorOptions, forecast, integrate
from .benchmarks import TIME_KERNEL, generate_dataset, relative_error, run_experiment

__version__ = "0.1.0"

__all__ = [
    "TIME_KERNEL",
    "FunctionalLayout",
    "KernelSpec",
    "RegularizedSystem",
    "SingularSystemError",
    "solve_ridge",
    "LearnedHamiltonian",
    "Ridges",
    "fit_two_step",
    "OneStepOptions",
    "OneStepProblem",
    "SlackVariables",
    "fit_one_step",
    "IntegratorOptions",
    "forecast",
    "integrate",
    "generate_dataset",
    "relative_error",
    "run_experiment",
]
