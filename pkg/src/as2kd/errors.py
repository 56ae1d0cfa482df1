"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies.
"""


class AS2KDError(Exception):
    """Base class for all package errors."""


class ConfigError(AS2KDError):
    """Invalid configuration or incompatible option combination."""


class DataError(AS2KDError):
    """Malformed, inconsistent, or missing input data."""


class SchemaError(DataError):
    """A serialized record violates its file schema."""


class ProviderError(AS2KDError):
    """A translation or scoring provider failed or is misconfigured."""


class NumericError(AS2KDError):
    """Non-finite values or numerically invalid state during training."""


# CLI exit codes. 1 is left to unexpected crashes.
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
