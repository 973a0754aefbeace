"""Exception hierarchy shared by all modules."""


class LrfqrError(Exception):
    """Base class for package errors."""


class InvalidInput(LrfqrError, ValueError):
    pass


class GridMismatch(LrfqrError, ValueError):
    pass


class NumericalError(LrfqrError, ArithmeticError):
    pass


class SolverDiverged(NumericalError):
    pass


class TuningFailed(LrfqrError, RuntimeError):
    """Raised when every cell of a tuning grid failed.

    ``errors`` maps cell index to the exception raised by that cell.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = dict(errors or {})


class GenerationError(LrfqrError, RuntimeError):
    """A simulated quantile row violated monotonicity or support bounds."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
