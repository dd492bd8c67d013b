"""Exception types shared across the package.

The CLI maps these onto process exit codes: config/usage problems exit 2,
data problems exit 3, checkpoint problems exit 4.
"""


class SpikeformerError(Exception):
    """Base class for all package errors."""


class ShapeError(SpikeformerError, ValueError):
    """Operand shapes are incompatible for an operation."""


class ConfigError(SpikeformerError, ValueError):
    """A model/training configuration is invalid or unparseable."""


class DataError(SpikeformerError, ValueError):
    """A dataset source is missing, malformed, or truncated."""


class CheckpointError(SpikeformerError, ValueError):
    """A checkpoint file cannot be read back."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, unsupported version, or truncated checkpoint."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor does not match the model it is loaded into."""


class InstrumentationError(SpikeformerError, ValueError):
    """Profiler inputs are inconsistent (e.g. a firing rate outside [0,1])."""


class TrainingDiverged(SpikeformerError, RuntimeError):
    """Loss became non-finite; diagnostics were dumped before aborting."""
