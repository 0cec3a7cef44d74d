"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: user-input problems (ConfigError,
DataError, ValidationError) exit 1; runtime failures (TrainingError,
InternalError, anything unexpected) exit 2.
"""


class SepAttnError(Exception):
    """Base class for all package errors."""


class ConfigError(SepAttnError):
    """Invalid configuration or incompatible dimensions."""


class DataError(SepAttnError):
    """Malformed or out-of-range input data."""


class ValidationError(SepAttnError):
    """A record or distribution violating a required invariant."""


class TrainingError(SepAttnError):
    """Non-finite losses or gradients during optimization."""


class InternalError(SepAttnError):
    """Inconsistent internal state, e.g. a backward/forward cache mismatch."""
