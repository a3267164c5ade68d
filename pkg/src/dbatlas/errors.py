"""Exception types shared across the toolkit."""


class DbatlasError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(DbatlasError):
    """Invalid model / optimizer / run configuration."""


class ShapeError(DbatlasError):
    """Input dimensions do not match what the operation expects."""


class ValidationError(DbatlasError):
    """Malformed values (e.g. soft targets that do not sum to one)."""


class NumericError(DbatlasError):
    """NaN/Inf encountered; the offending step is refused."""


class TrainingError(DbatlasError):
    """Training diverged. Carries the epoch index where it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class FormatError(DbatlasError):
    """A file does not match its declared on-disk format. Carries a byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UsageError(DbatlasError):
    """Operation invoked on data it is not meant for."""


class SamplingError(DbatlasError):
    """A requested sampling mode cannot be satisfied by the dataset."""


class DegeneracyError(DbatlasError):
    """Triplet too close to colinear/coincident to span a plane."""
