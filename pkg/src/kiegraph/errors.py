"""Exception types shared across the package."""


class KiegraphError(Exception):
    """Base class for all package errors."""


class DimensionError(KiegraphError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ValidationError(KiegraphError, ValueError):
    """Input violates a documented precondition or invariant."""


class DegenerateInputError(ValidationError):
    """Input is structurally valid but degenerate (e.g. fully masked softmax)."""


class ParseError(KiegraphError, ValueError):
    """Annotation stream could not be parsed; message names the offending line."""


class CheckpointError(KiegraphError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointShapeError(CheckpointError):
    """Checkpoint parameter names/shapes do not match the model being loaded."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ends before all declared payload bytes."""
