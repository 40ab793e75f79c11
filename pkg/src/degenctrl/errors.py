"""Exception types shared across the package."""


class DegenctrlError(Exception):
    """Base class for all package errors."""


class HypothesisViolationError(DegenctrlError):
    """A structural hypothesis on the problem data fails (degeneracy ratio,
    monotonicity, coupling positivity, normalization)."""


class SingularEvaluationError(DegenctrlError):
    """A weight was requested at a time where it is singular."""


class ConstructionError(DegenctrlError):
    """An object could not be built from the given data."""


class StepSizeError(DegenctrlError):
    """A time step produced a non-solvable or non-finite linear system."""


class ParabolicityLostError(DegenctrlError):
    """A nonlocal diffusion factor became non-positive along the trajectory."""


class NumericalError(DegenctrlError):
    """An iterative or factorization-based computation failed to converge."""


class ConfigError(DegenctrlError):
    """An experiment configuration is invalid.  Carries a line number when
    the problem is tied to a specific config line."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no
