"""Exception taxonomy shared across the package."""


class QmambaError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(QmambaError, ValueError):
    """Array shapes or index ranges are inconsistent."""


class NumericError(QmambaError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class DomainError(QmambaError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigError(QmambaError, ValueError):
    """Invalid or inconsistent configuration."""


class UsageError(QmambaError, TypeError):
    """API misuse: wrong arity, wrong call context, non-scalar loss, ..."""


class FormatError(QmambaError, ValueError):
    """Malformed file content (bad magic, bad header fields)."""


class DataIOError(QmambaError, OSError):
    """Truncated or unreadable data file."""


class ConsistencyError(QmambaError, ValueError):
    """Two inputs that must agree (e.g. image/label counts) do not."""


class CheckpointError(QmambaError, ValueError):
    """Checkpoint file does not match the expected format or config."""
