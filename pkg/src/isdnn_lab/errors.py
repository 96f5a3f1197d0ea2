"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: ``ConfigError`` and
``DimensionError`` -> 2, ``StorageError`` -> 3, ``NumericError`` -> 4.
"""


class LabError(Exception):
    """Base class for every error raised deliberately by this package."""


class ConfigError(LabError, ValueError):
    """Invalid configuration or argument combination."""


class DimensionError(LabError, ValueError):
    """Array shapes do not conform."""


class EstimationError(LabError, ValueError):
    """An estimator cannot produce a result (singular or ill-conditioned Gram matrix)."""


class MetricError(LabError, ValueError):
    """A metric is undefined for its inputs."""


class NumericError(LabError, ArithmeticError):
    """Non-finite values or divergence during iteration or training."""


class StorageError(LabError, OSError):
    """Malformed, truncated or mismatched files on disk."""
