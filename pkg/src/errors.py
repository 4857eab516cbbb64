"""Exception hierarchy for the MultiAC6 toolkit."""

from typing import Optional


class MultiAC6Error(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(MultiAC6Error, ValueError):
    """Invalid parameters, unreachable poses or unknown configuration keys."""


class DimensionError(MultiAC6Error, ValueError):
    """Array lengths or shapes do not match."""


class UsageError(MultiAC6Error, ValueError):
    """An operation was called outside its preconditions."""


class BufferNotReadyError(UsageError):
    """The replay buffer holds fewer transitions than requested."""

    def __init__(self, available: int, requested: int):
        super().__init__(f"Replay buffer holds {available} transitions, {requested} requested")
        self.available = available
        self.requested = requested


class SimulationDivergenceError(MultiAC6Error, RuntimeError):
    """The mass-spring integrator produced non-finite or out-of-range coordinates."""

    def __init__(self, substep: int, time: float, detail: str = ""):
        message = f"Simulation diverged at substep {substep} (t={time:.4f} s)"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.substep = substep
        self.time = time


class DatasetGenerationError(MultiAC6Error, RuntimeError):
    """A record could not be produced within the resample budget."""


class DatasetFormatError(MultiAC6Error, ValueError):
    """A dataset file is truncated or cannot be parsed."""


class DatasetVersionError(DatasetFormatError):
    """A dataset file was written by an incompatible format version."""


class CheckpointError(MultiAC6Error, ValueError):
    """A checkpoint is corrupt, tampered with, or incompatible."""


class TrainingAbortedError(MultiAC6Error, RuntimeError):
    """A rollout worker crashed; the partial training log is attached."""

    def __init__(self, message: str, partial_log: Optional[object] = None):
        super().__init__(message)
        self.partial_log = partial_log
