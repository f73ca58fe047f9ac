"""Exception hierarchy shared by every pipeline stage."""


class ReasonerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ReasonerError, ValueError):
    pass


class DatasetError(ReasonerError):
    pass


class MissingImage(DatasetError):
    pass


class UnreadableFile(DatasetError):
    pass


class DimensionMismatch(DatasetError):
    pass


class EmptyDataset(DatasetError):
    pass


class OutOfBounds(ReasonerError, ValueError):
    pass


class LengthMismatch(ReasonerError, ValueError):
    pass


class EmptyMatrix(ReasonerError, ValueError):
    pass


class DegenerateTarget(ReasonerError, ValueError):
    """Raised when a target has fewer than two samples of either class."""


class NoRoutes(ReasonerError):
    pass


class InvalidRange(ReasonerError, ValueError):
    pass


class EmptySummary(ReasonerError, ValueError):
    pass


class IoFailure(ReasonerError, OSError):
    pass
