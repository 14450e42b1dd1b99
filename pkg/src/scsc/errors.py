"""Exception hierarchy shared by every module."""


class ScscError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(ScscError, ValueError):
    """Shapes, parameters or values that violate an operation's preconditions."""


class NumericalError(ScscError, ArithmeticError):
    """Non-finite values, singular systems or inconsistent transforms."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration budget without meeting tolerances.

    The final residuals are kept on the exception so callers can decide
    whether the partial result is usable.
    """

    def __init__(self, message, residuals=None, result=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})
        self.result = result
