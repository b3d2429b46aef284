"""Exception types shared across the toolkit."""


class BackdoorLabError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(BackdoorLabError):
    """Patch or image dimensions are incompatible."""


class PlacementError(BackdoorLabError):
    """A fixed trigger placement falls outside the host image."""


class CapacityError(BackdoorLabError):
    """Not enough images to satisfy a split or poison request."""


class DatasetError(BackdoorLabError):
    """Datasets cannot be combined (dims or class universe mismatch)."""


class DependencyError(BackdoorLabError):
    """A required companion model is missing."""


class CoordinateError(BackdoorLabError):
    """Pixel or bbox coordinates out of bounds."""


class EvaluationError(BackdoorLabError):
    """Evaluation is undefined (e.g. empty denominator)."""


class TrainingError(BackdoorLabError):
    """Training diverged or produced invalid values."""


class ConfigError(BackdoorLabError):
    """Invalid configuration value."""


class ArtifactNotFoundError(BackdoorLabError):
    """A referenced registry artifact does not exist."""
