"""Exception types shared across the package."""


class CstrError(Exception):
    """Base class for all structured errors raised by cstrlab."""


class ShapeError(CstrError):
    """Tensor shapes are incompatible for the requested operation."""


class DtypeError(CstrError):
    """Tensors of mixed precision were combined in one operation."""


class GraphError(CstrError):
    """Invalid use of the gradient tape (e.g. non-scalar backward root)."""


class ConfigError(CstrError):
    """Invalid configuration file, key, or value."""


class DataError(CstrError):
    """Invalid dataset input: bad word, broken manifest, unreadable image."""


class CheckpointError(CstrError):
    """Malformed checkpoint file or state mismatch on restore."""


class NonFiniteGradientError(CstrError):
    """An optimizer step received a NaN or Inf gradient and was aborted."""
