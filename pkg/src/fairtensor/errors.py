"""Exception types raised across the package."""


class FairtensorError(Exception):
    """Base class for all package-specific errors."""


class TensorFormatError(FairtensorError, ValueError):
    """A data file could not be parsed; the message names the offending line."""


class DuplicateEntryError(FairtensorError, ValueError):
    """The same index tuple appears more than once in one tensor."""


class EntryBoundsError(FairtensorError, IndexError):
    """A coordinate lies outside the declared mode sizes."""


class MissingLabelError(FairtensorError, ValueError):
    """A sensitive entity has no group label."""


class ConfigurationError(FairtensorError, ValueError):
    """Inconsistent model or experiment configuration."""


class DegenerateFactorError(FairtensorError, ValueError):
    """A factor row is unusable, e.g. zero norm where cosine is needed."""


class TrainingDivergedError(FairtensorError, RuntimeError):
    """Training produced a non-finite loss; the message names epoch and batch."""
