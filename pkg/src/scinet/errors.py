"""Exception types shared across the package.

The command line maps these onto exit codes, so every error raised by
library code should be one of them (or a subclass).
"""


class ScinetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ScinetError):
    """A configuration value is missing, malformed, or inconsistent."""


class DimensionError(ScinetError):
    """Tensor shapes do not line up for the requested operation."""


class NumericError(ScinetError):
    """A computation produced a non-finite value."""


class UsageError(ScinetError):
    """An API was called in a way its contract forbids."""


class CheckpointError(ScinetError):
    """A checkpoint file is unreadable, truncated, or incompatible."""
