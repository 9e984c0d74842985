"""Exception hierarchy shared by every package of the framework.

The CLI maps these onto process exit codes (see config.constants).
"""


class EPError(Exception):
    """Base class for every error raised by the framework."""


class DimensionError(EPError, ValueError):
    """Tensor shapes do not fit the requested operation."""


class IndexCorruptionError(EPError):
    """A pooling index map points outside its target tensor."""


class ContractViolation(EPError, ValueError):
    """A documented precondition was not met by the caller."""


class DivergenceError(EPError):
    """Membrane potentials left the admissible range during relaxation."""

    def __init__(self, step, layer, max_abs, batch_index=None):
        self.step = step
        self.layer = layer
        self.max_abs = max_abs
        self.batch_index = batch_index
        super().__init__(self._describe())

    def _describe(self):
        message = f"relaxation diverged at step {self.step}, layer {self.layer} (max |xi| = {self.max_abs:.3g})"
        if self.batch_index is not None:
            message += f", batch {self.batch_index}"
        return message

    def with_batch(self, batch_index):
        return DivergenceError(self.step, self.layer, self.max_abs, batch_index)


class NonFiniteGradientError(EPError):
    """A gradient estimate contained NaN or inf; the update was rejected."""


class OracleUnavailableError(EPError):
    """The mean-field relaxation did not reach the requested residual."""


class DatasetError(EPError):
    """Base class for dataset ingestion problems."""


class IdxFormatError(DatasetError):
    """An IDX file carried the wrong magic number or dimensions."""


class DatasetIOError(DatasetError, OSError):
    """A dataset file is missing or truncated."""


class DatasetConsistencyError(DatasetError):
    """Image and label files (or a dataset's fields) disagree."""


class UndefinedRatioError(EPError, ZeroDivisionError):
    """An energy ratio was requested with a zero denominator."""


class ConfigError(EPError):
    """A configuration file failed to parse or validate."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)


class CheckpointError(EPError):
    """A checkpoint could not be read."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""
