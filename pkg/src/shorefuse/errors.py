"""Exception hierarchy shared by every shorefuse module."""


class ShorefuseError(Exception):
    """Base class for all package errors."""


class ValidationError(ShorefuseError, ValueError):
    """Input data violates a type invariant (shape, range, finiteness)."""


class FormatError(ShorefuseError):
    """On-disk layout is missing or malformed."""


class ConfigError(ShorefuseError, ValueError):
    """A configuration value is out of its allowed range."""


class OrderingError(ValidationError):
    """Timestamps are not in the required order."""


class ContextError(ShorefuseError, ValueError):
    """A frame is requested as a target but only has enough history to be context."""


class GenerationError(ShorefuseError):
    """Synthetic scene generation failed for a specific frame."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class NumericError(ShorefuseError, ArithmeticError):
    """A loss or gradient became non-finite during training."""
