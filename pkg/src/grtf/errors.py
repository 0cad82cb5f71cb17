"""Exception types shared across the package."""


class GrtfError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GrtfError, ValueError):
    """Invalid configuration or argument combination."""


class DataError(GrtfError, ValueError):
    """Input data that cannot be processed (wrong shape, too short, corrupt)."""
