"""Exception types shared by the numerical modules."""


class GffLoopsError(Exception):
    """Base class for all package errors."""


class PreconditionError(GffLoopsError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class TruncationError(GffLoopsError, ArithmeticError):
    """A series did not reach the requested tolerance within the term cap.

    The partial sum is kept on the ``partial_sum`` attribute.
    """

    def __init__(self, message, partial_sum=None):
        super().__init__(message)
        self.partial_sum = partial_sum


class IntegrationError(GffLoopsError, ArithmeticError):
    """Adaptive quadrature failed to converge."""


class PoleError(GffLoopsError, ArithmeticError):
    """Evaluation requested at or beyond a pole of an analytic continuation."""


class NumericError(GffLoopsError, ArithmeticError):
    """Inverse-CDF construction or bracketing failed."""


class ConstructionError(GffLoopsError, ValueError):
    """A lattice domain could not be built from the given shape."""


class SolverError(GffLoopsError, RuntimeError):
    """Sparse factorization or linear solve failed."""


class ExplorationError(GffLoopsError, RuntimeError):
    """Iterated loop exploration exceeded its iteration cap."""


class EmptySampleError(GffLoopsError, ValueError):
    """A statistic was requested on an empty sample."""


class InsufficientDataError(GffLoopsError, ValueError):
    """Too few observations for the requested estimate."""


class FixtureError(GffLoopsError, RuntimeError):
    """The fixtures file is missing, malformed, or fails its checksum."""
