"""Exception hierarchy shared across the package."""


class NvaeError(Exception):
    """Base class for all package errors."""


class ShapeError(NvaeError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(NvaeError):
    """A numeric argument is outside a function's domain."""


class NonFiniteError(NvaeError):
    """A forward operation produced NaN or Inf."""


class DataError(NvaeError):
    """A dataset file or specification is malformed."""


class CheckpointError(NvaeError):
    """A checkpoint file is unreadable or from an incompatible format."""


class ConfigError(NvaeError):
    """A run configuration file is invalid."""


class TrainingAborted(NvaeError):
    """Training stopped because the objective became non-finite."""

    def __init__(self, message: str, epoch: int, step: int, checkpoint_path=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.checkpoint_path = checkpoint_path
