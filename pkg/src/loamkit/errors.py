"""Exception types that map onto CLI exit codes."""


class ConfigError(Exception):
    """Malformed or inconsistent configuration (exit code 2)."""


class DatasetError(Exception):
    """Missing or malformed on-disk dataset (exit code 3)."""
