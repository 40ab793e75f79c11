"""Numerical laboratory for one-control null controllability of 1-D coupled
degenerate parabolic systems with nonlocal diffusion."""

from . import carleman, cli, coeffs, control, discretization, solver, weights
from .report import AuditReport

__version__ = "0.1.0"

__all__ = ["coeffs", "discretization", "weights", "solver", "carleman",
           "control", "cli", "AuditReport", "__version__"]
