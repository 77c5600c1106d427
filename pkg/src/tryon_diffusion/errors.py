"""Exception types raised across the package."""


class ShapeError(ValueError):
    """A tensor does not have the shape an operation requires."""


class ConfigurationError(ValueError):
    """Inconsistent configuration, e.g. a garment bank that does not match the UNet sites."""


class ValidationError(ValueError):
    """A dataset manifest or record failed validation."""


class TrainingError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""
