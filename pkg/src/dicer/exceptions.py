"""Exception hierarchy shared across the package."""


class DicerError(Exception):
    """Base class for all package errors."""


class ConfigError(DicerError, ValueError):
    """Bad configuration key or value."""


class DataError(DicerError, ValueError):
    """Unreadable, malformed or missing input data."""


class ShapeError(DicerError, ValueError):
    """Tensor shapes incompatible with an operation or a stored config."""


class NumericalError(DicerError, FloatingPointError):
    """Non-finite value produced during a forward pass or training."""


class CheckpointError(DicerError, IOError):
    """Missing, truncated or otherwise corrupt checkpoint."""
