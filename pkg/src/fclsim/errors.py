"""Exception types raised across the simulator."""


class FCLError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FCLError, ValueError):
    """Invalid configuration value or combination of values."""


class LayoutError(FCLError, ValueError):
    """Two parameter vectors (or updates) with incompatible layouts were combined."""


class UndefinedDistanceError(FCLError, ValueError):
    pass


class MissingTaskError(FCLError, KeyError):
    pass


class EmptyBatchError(FCLError, ValueError):
    pass


class ParseError(FCLError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ProtocolError(FCLError, RuntimeError):
    """An operation was called out of order (e.g. refilling an accuracy column)."""


class UndefinedMetricError(FCLError, ValueError):
    pass


class InputError(FCLError, ValueError):
    pass
