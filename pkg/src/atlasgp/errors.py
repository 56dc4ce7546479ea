"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`AtlasGPError`.
The two intermediate classes decide the command-line exit code: input problems
exit with 2, numerical breakdowns with 3.
"""


class AtlasGPError(Exception):
    exit_code = 3


class DataError(AtlasGPError):
    """Malformed or inconsistent input."""

    exit_code = 2


class NumericError(AtlasGPError):
    """A computation could not be completed."""

    exit_code = 3


class ShapeError(DataError):
    pass


class PreconditionError(DataError):
    pass


class CoverError(DataError):
    pass


class AssignmentError(DataError):
    pass


class PredictionError(DataError):
    pass


class DigestMismatchError(DataError):
    pass


class NotApplicableError(AtlasGPError):
    exit_code = 2


class NumericalError(NumericError):
    """Cholesky factorization failed even after adding jitter."""

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


class OptimizationError(NumericError):
    pass


class TrainingError(NumericError):
    pass


class BackwardMapError(NumericError):
    pass


class TransitionError(NumericError):
    pass


class DriftError(NumericError):
    pass


class GridError(NumericError):
    pass


class FitError(NumericError):
    pass


class BaselineError(NumericError):
    pass
