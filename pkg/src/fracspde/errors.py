"""Exception types raised across the package."""


class FracSPDEError(Exception):
    """Base class for all package errors."""


class DomainError(FracSPDEError, ValueError):
    """An argument lies outside the supported domain of an operation."""


class QuadratureError(FracSPDEError, ArithmeticError):
    """Adaptive quadrature could not reach the requested tolerance."""


class IntegralDivergenceError(FracSPDEError, ArithmeticError):
    """A required integral diverges for the given parameters."""


class ResolutionError(FracSPDEError, ValueError):
    """A grid fails one of the kernel truncation heuristics."""

    def __init__(self, heuristic: str, parameter: str, message: str):
        self.heuristic = heuristic
        self.parameter = parameter
        super().__init__(f"{heuristic} heuristic failed ({parameter}): {message}")


class BindingError(FracSPDEError, ValueError):
    """Objects built on different grids were combined."""


class EvaluationError(FracSPDEError, ValueError):
    """A user-supplied envelope or nonlinearity could not be evaluated."""


class ConditionViolation(FracSPDEError, ValueError):
    """The noise/nonlinearity pair does not satisfy the existence condition."""


class ConvergenceError(FracSPDEError, ArithmeticError):
    """An iteration did not converge; ``history`` holds its diagnostics."""

    def __init__(self, message: str, history=None):
        self.history = history
        super().__init__(message)
