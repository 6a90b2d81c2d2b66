"""Exception hierarchy shared by all pidboost modules.

Each exception carries a ``category`` string so the CLI can report a
machine-readable error kind and map it to an exit code.
"""

from __future__ import annotations


class PidBoostError(Exception):
    """Base class for every error raised by this package."""

    category = "internal"


class DataError(PidBoostError, ValueError):
    """Malformed, inconsistent or insufficient input data."""

    category = "data"


class ConfigError(PidBoostError, ValueError):
    """Invalid configuration value (gains, fractions, lag sets, grids)."""

    category = "config"


class ModelError(PidBoostError, RuntimeError):
    """Fitting or prediction failure in a base forecaster or corrector."""

    category = "model"


class BoosterError(PidBoostError, RuntimeError):
    """Booster used out of order (uninitialized, wrong round length, ...)."""

    category = "booster"


class FormatError(PidBoostError, ValueError):
    """A serialized model, state or run file could not be parsed."""

    category = "format"


EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "data": 3,
    "config": 4,
    "model": 5,
    "booster": 6,
    "format": 7,
    "io": 8,
}
