"""Exception hierarchy shared across the package."""


class RVFusionError(Exception):
    """Base class for all package errors."""


class ContractError(RVFusionError, ValueError):
    """An operation was called with inputs that violate its contract
    (shape mismatch, scale mismatch, indivisible dims, ...)."""


class GeometryError(RVFusionError, ValueError):
    """Input outside the domain of a geometric conversion."""


class CalibrationError(RVFusionError, ValueError):
    pass


class MalformedSweepError(RVFusionError, ValueError):
    pass


class NoOverlapError(RVFusionError, ValueError):
    """Camera and LiDAR azimuth ranges do not intersect."""


class SceneConfigError(RVFusionError, ValueError):
    pass


class NumericError(RVFusionError, ArithmeticError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(RVFusionError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(RVFusionError):
    """Dataset missing, incomplete or incompatible."""
