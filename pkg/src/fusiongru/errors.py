"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when array shapes are incompatible for an operation."""


class ConfigError(ValueError):
    """Raised when a configuration is invalid or incompatible with data."""

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)


class DatasetParseError(ValueError):
    """Raised for malformed dataset or checkpoint files.

    ``line`` is the 1-based line number and ``record`` the 0-based record
    index where the problem was found, when known.
    """

    def __init__(self, message, line=None, record=None):
        where = []
        if record is not None:
            where.append(f"record {record}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.record = record


class VersionError(DatasetParseError):
    """Raised when a file declares an unsupported format version."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""
