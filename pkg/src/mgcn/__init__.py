"""Multi-level graph convolutional networks for anchor link prediction."""

from .errors import (ConfigError, DataError, DivergenceError, IntegrityError,
                     MgcnError)
from .graph import AnchorLinkSet, SimpleGraph

__version__ = "0.1.0"

__all__ = [
    "AnchorLinkSet",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "IntegrityError",
    "MgcnError",
    "SimpleGraph",
    "__version__",
]
