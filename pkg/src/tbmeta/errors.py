"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class TBMetaError(Exception):
    """Base class for all package errors."""


class ValidationError(TBMetaError, ValueError):
    """Malformed input: bad parameters, distributions, kernels or configs."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class NumericalError(TBMetaError, ArithmeticError):
    """A numerical precondition failed (singular matrix, no convergence...)."""


class NonNormalizableError(ValidationError):
    pass


class SingularMatrixError(NumericalError):
    """Raised when a matrix that must be inverted is (numerically) singular.

    ``which`` names the offending matrix and ``condition`` carries the
    2-norm condition estimate that triggered the failure.
    """

    def __init__(self, which, condition):
        super().__init__(f"{which} is singular (condition estimate {condition:.3e})")
        self.which = which
        self.condition = condition


class HypothesisViolation(NumericalError):
    """Inputs do not satisfy the hypotheses of a structured spectral result."""

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = dict(residuals)


class DegenerateDenominatorError(NumericalError):
    def __init__(self, expression, value):
        super().__init__(f"denominator {expression} vanishes (value {value:.3e})")
        self.expression = expression
        self.value = value


class StepSizeUnderflow(NumericalError):
    def __init__(self, t, h):
        super().__init__(f"step size underflow at t={t:.6g} (h={h:.3e})")
        self.t = t
        self.h = h
