"""Error types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class AmlkitError(Exception):
    """Base class for package errors."""


class ConfigError(AmlkitError):
    """Invalid configuration file, key, or flag."""


class DataError(AmlkitError):
    """Malformed or unusable input data."""


class NumericError(AmlkitError):
    """Non-finite values encountered during optimization."""
