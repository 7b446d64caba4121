"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration values (bad thresholds, degenerate ranges, ...)."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class DataError(RuntimeError):
    """Dataset files missing, unreadable, or inconsistent with the manifest."""


class NumericsError(RuntimeError):
    """Non-finite values reached an operation that requires finite input."""


class CheckpointError(RuntimeError):
    """Checkpoint file corrupt or written by an incompatible format version."""


class TrainingDiverged(RuntimeError):
    """A loss term became non-finite during training."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
