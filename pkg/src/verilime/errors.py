"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, EmbedderError -> 3, NumericalError -> 4.
"""


class VerilimeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VerilimeError):
    """Invalid configuration or command-line usage."""


class DataError(VerilimeError):
    """Unresolvable or malformed input data (images, manifests, CSVs)."""


class EmbedderError(VerilimeError):
    """An embedder failed to produce a valid embedding."""


class BridgeError(EmbedderError):
    """The external embedding bridge process failed or misbehaved."""


class NumericalError(VerilimeError):
    """A numerical routine could not produce a result."""


class SingularSystemError(NumericalError):
    """The normal equations are singular (rank-deficient design, lambda=0)."""
