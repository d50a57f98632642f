"""Exception types shared across the package."""


class ConfigError(Exception):
    """Bad run configuration or command-line usage."""


class DataError(Exception):
    """Malformed or inconsistent input data."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible checkpoint file."""
