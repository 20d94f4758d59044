class ImageReadError(Exception):
    """Raised when an image file cannot be decoded (missing, truncated,
    or zero-sized)"""

    pass


class UnsupportedFormat(Exception):
    """Raised when a file extension is not one of the supported raster
    formats"""

    pass


class ImageWriteError(Exception):
    """Raised when an image or raster dump cannot be written to disk"""

    pass


class OutOfRangeValue(ValueError):
    """Raised when a value falls outside the range an operation accepts,
    e.g. a channel above 1.0 on save"""

    pass


class DimensionMismatch(ValueError):
    """Raised when two rasters that must share a shape do not"""

    pass


class InvalidParameter(ValueError):
    """Raised when a parameter object is constructed with values outside
    their documented domain"""

    pass


class InvalidWeights(ValueError):
    """Raised when a smoothness weight is nonpositive or non-finite during
    system assembly"""

    pass


class ConvergenceError(RuntimeError):
    """Raised when the conjugate gradient solver does not reach the requested
    relative residual within its iteration budget"""

    def __init__(self, message: str, iterations: int, residual: float) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class FrameSequenceError(Exception):
    """Raised when a directory of numbered frames is missing frames or
    does not exist"""

    pass


class ConfigError(Exception):
    """Raised when a configuration file is malformed or contains unknown
    keys"""

    pass
