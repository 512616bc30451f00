"""Exception types shared across the package."""


class SicrefError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedDepthError(SicrefError):
    """Raised for images with more than 8 bits per sample."""


class EmptyDatasetError(SicrefError):
    """Raised when a dataset directory contains no usable images."""


class DecodeError(SicrefError):
    """Raised when a payload or container cannot be decoded."""


class CheckpointMismatchError(SicrefError):
    """Raised when checkpoints that must belong together do not."""


class MissingCheckpointError(SicrefError):
    """Raised when a requested (lambda, l) checkpoint cell is absent."""


class ConfigError(SicrefError):
    """Raised for invalid model or training configurations."""
