"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError / IntegrityError -> 3, DivergenceError -> 4.
"""


class MgcnError(Exception):
    """Base class for all package errors."""


class ConfigError(MgcnError):
    """Invalid parameter value or inconsistent configuration."""


class DataError(MgcnError):
    """Malformed or inconsistent input data (files, id maps, labels)."""


class IntegrityError(MgcnError):
    """An internal consistency contract was violated (e.g. a node lost track of)."""


class DivergenceError(MgcnError):
    """Training produced a non-finite objective."""
