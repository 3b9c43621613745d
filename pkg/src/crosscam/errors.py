"""Exception types raised across the package."""


class CrossCamError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(CrossCamError):
    pass


class DegenerateBand(CrossCamError):
    pass


class PointAtCameraCenter(CrossCamError):
    pass


class InvalidThreshold(CrossCamError, ValueError):
    pass


class ZeroVector(CrossCamError, ValueError):
    pass


class ConfigError(CrossCamError, ValueError):
    pass


class DimMismatch(CrossCamError, ValueError):
    pass


class LabelOutOfRange(CrossCamError, ValueError):
    pass


class PhaseBatchMismatch(CrossCamError, ValueError):
    pass


class Diverged(CrossCamError, FloatingPointError):
    pass


class MissingGT(CrossCamError):
    pass


class MissingArtifacts(CrossCamError, FileNotFoundError):
    pass
