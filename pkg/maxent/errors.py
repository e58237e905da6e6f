"""
Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI should return for it:
1 usage/config, 2 data, 3 numerical failure.
"""


class DpbnError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(DpbnError, ValueError):
    """Invalid configuration file, unknown key or bad command-line usage."""

    exit_code = 1


class DimensionError(DpbnError, ValueError):
    """Vector or matrix dimensions do not agree."""

    exit_code = 1


class DataError(DpbnError, ValueError):
    """Malformed input files or data outside the expected range."""

    exit_code = 2


class RangeViolationError(DataError):
    """Data vectors are not strictly inside their declared data range."""

    def __init__(self, message: str, indices=None):
        super().__init__(message)
        self.indices = list(indices) if indices is not None else []


class NumericalError(DpbnError, ArithmeticError):
    """A numerical procedure could not produce a usable result."""

    exit_code = 3


class ActivationDomainError(NumericalError, ValueError):
    """Activation evaluated outside its domain (or at a non-finite input)."""

    def __init__(self, message: str, index: int = -1):
        super().__init__(message)
        self.index = index
