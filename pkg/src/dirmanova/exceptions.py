"""Error hierarchy.

Two branches matter to callers: :class:`DataError` for inputs that cannot
support the requested computation (bad shapes, non-finite values, too-small
samples) and :class:`NumericalError` for computations that break down on
otherwise valid input (singular matrices, failed iterations, domain
violations).  The command-line front end maps them to exit codes 2 and 3.
"""


class DirManovaError(Exception):
    """Base class for all library errors."""


class DataError(DirManovaError):
    """The input data or configuration cannot support the computation."""


class SampleTooSmallError(DataError):
    """A sample-size condition required by the requested method is violated."""


class NumericalError(DirManovaError):
    """A numerical computation broke down on otherwise valid input."""


class NotPositiveDefiniteError(NumericalError):
    """A matrix required to be positive definite is not.

    ``minor`` is the 1-based index of the first non-positive leading minor,
    as reported by the Cholesky factorization.
    """

    def __init__(self, message: str, minor: int = 0):
        super().__init__(message)
        self.minor = minor


class ConvergenceError(NumericalError):
    """An iterative routine failed to reach its tolerance.

    Carries the best iterate found so far when available.
    """

    def __init__(self, message: str, best=None, grad_norm: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class QuadratureError(NumericalError):
    """A quadrature callback produced an invalid value."""
