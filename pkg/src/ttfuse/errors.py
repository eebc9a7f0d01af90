"""Exception hierarchy shared across the package."""


class FusionError(Exception):
    """Base class for all errors raised by ttfuse."""


class ShapeError(FusionError, ValueError):
    """Tensor or image dimensions are incompatible."""


class MissingGradientError(FusionError):
    """An optimizer step was requested for a parameter without a gradient."""


class NumericError(FusionError, ArithmeticError):
    """A loss or activation became NaN or infinite."""


class ImageIOError(FusionError, OSError):
    pass


class ImageNotFoundError(ImageIOError, FileNotFoundError):
    pass


class UnsupportedImageError(ImageIOError):
    """The file uses a format, bit depth or layout this package does not read."""


class TruncatedImageError(ImageIOError):
    pass


class CheckpointError(FusionError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCRCError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class ConfigError(FusionError, ValueError):
    """A run configuration file could not be parsed or validated."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DatasetError(FusionError):
    pass
