"""Exception hierarchy shared across the library and the CLI.

The CLI maps each class to a process exit code: ConfigError -> 2,
DataError -> 3, InternalError -> 4.
"""


class TreeStereoError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(TreeStereoError):
    """Invalid parameter value or malformed configuration."""

    exit_code = 2


class DataError(TreeStereoError):
    """Unreadable, malformed, or mutually inconsistent input data."""

    exit_code = 3


class InternalError(TreeStereoError):
    """An internal invariant was violated; indicates a bug, not bad input."""

    exit_code = 4
