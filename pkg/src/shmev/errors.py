"""Exception types shared across the package.

Plain ``ValueError`` is raised for argument-domain violations; the classes
here mark failures the command line maps to distinct exit codes.
"""


class ShmevError(Exception):
    """Base class for package-specific failures."""


class ConfigError(ShmevError):
    """Invalid or unparseable run configuration (CLI exit code 2)."""


class DataError(ShmevError):
    """Malformed or insufficient input data (CLI exit code 3)."""


class NumericError(ShmevError):
    """Numerical failure outside normal rejection handling (CLI exit code 4)."""


class ConvergenceError(NumericError):
    """An iterative solver failed to reach its tolerance."""
