"""Exception types raised across the package."""


class FloodGraphError(Exception):
    """Base class for package errors."""


class GridFormatError(FloodGraphError, ValueError):
    """Malformed ESRI ASCII grid header or body."""


class DimensionError(FloodGraphError, ValueError):
    """Array shapes or value counts do not match the declared dimensions."""


class GeoreferenceError(FloodGraphError, ValueError):
    """Rasters that must be aligned have different georeferencing."""


class DomainError(FloodGraphError, ValueError):
    """Input is outside the domain where the operation is defined."""


class CapacityError(FloodGraphError, ValueError):
    """Not enough eligible cells to satisfy a sampling request."""


class TrainingError(FloodGraphError, ValueError):
    """A model cannot be trained on the supplied data."""


class EvaluationError(FloodGraphError, ValueError):
    """Cross-validation produced no usable folds."""


class ConsistencyError(FloodGraphError, RuntimeError):
    """An internal invariant was violated."""


class StageError(FloodGraphError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
