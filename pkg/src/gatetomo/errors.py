"""Exception types shared across the package.

The CLI maps these onto exit codes (config 2, data 3, numerical 4).
"""


class GatetomoError(Exception):
    """Base class for package errors."""


class ConfigError(GatetomoError):
    """Invalid or inconsistent configuration input."""


class DataError(GatetomoError):
    """Malformed dataset or record content."""


class NumericalError(GatetomoError):
    """A numerical routine left its domain of validity."""
