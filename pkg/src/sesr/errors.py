"""Exception types shared across the package."""


class SESRError(Exception):
    """Base class for package errors."""


class ShapeError(SESRError, ValueError):
    """Tensor dimensions do not fit together."""


class ConfigError(SESRError, ValueError):
    """An invalid architecture, training or CLI configuration."""


class NonFiniteError(SESRError, FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""


class CheckpointError(SESRError):
    """A checkpoint file is malformed, truncated or incompatible."""
