"""Exception types raised by hankelrec."""


class HankelRecError(Exception):
    """Base class for all library errors."""


class GenerationError(HankelRecError):
    """Random signal generation could not satisfy its constraints."""


class DegenerateSignalError(HankelRecError):
    """A signal's Vandermonde factors are rank deficient."""


class OracleScaleError(HankelRecError, ValueError):
    """A dense reference routine was asked to build a matrix that is too large."""


class PartialSVDError(HankelRecError):
    """The iterative partial SVD did not reach its residual tolerance.

    The best iterate found is kept on ``best`` so callers can inspect it.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DivergenceError(HankelRecError):
    """A solver iterate blew up; ``last_finite`` holds the last finite iterate."""

    def __init__(self, message, last_finite=None, iteration=None):
        super().__init__(message)
        self.last_finite = last_finite
        self.iteration = iteration


class UndefinedResidualError(HankelRecError, ValueError):
    """The observed vector is zero, so the relative residual is undefined."""


class MemoryBudgetError(HankelRecError):
    """A configuration would allocate factor matrices beyond the memory budget."""
