"""Exception types shared across the package."""


class EmoAnchorError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EmoAnchorError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(EmoAnchorError):
    """Misuse of the autodiff tape (non-scalar loss, repeated backward, ...)."""


class FormatError(EmoAnchorError):
    """A binary file does not conform to its declared format."""


class ManifestError(EmoAnchorError):
    """A dataset manifest is malformed or references missing data."""


class ConfigError(EmoAnchorError):
    """A run configuration is invalid."""


class TrainingError(EmoAnchorError):
    """Training aborted (non-finite loss, missing gradient, ...)."""
