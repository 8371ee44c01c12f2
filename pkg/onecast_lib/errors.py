"""
Exception hierarchy for the OneCast library.

Every error carries the process exit code the CLI reports for it:
0 success, 2 config/validation, 3 data, 4 numeric divergence.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class OneCastError(Exception):
    """Base class for all library errors."""

    exit_code = EXIT_CONFIG


class ConfigError(OneCastError):
    exit_code = EXIT_CONFIG


class DimensionError(OneCastError):
    """Tensor shapes do not conform for an operation."""

    exit_code = EXIT_CONFIG


class ShapeError(DimensionError):
    pass


class PatchingError(DimensionError):
    """Window length is not a multiple of the patch length."""


class VocabularyError(OneCastError):
    """A token id lies outside the codebook vocabulary (and is not MASK)."""


class PreconditionError(OneCastError):
    pass


class DomainError(OneCastError):
    """A scalar argument lies outside the domain of a function."""


class DegenerateBatchError(OneCastError):
    """A loss was asked for with no contributing rows."""

    exit_code = EXIT_NUMERIC


class UndefinedRateError(OneCastError):
    exit_code = EXIT_NUMERIC


class CheckpointError(OneCastError):
    exit_code = EXIT_CONFIG


class DatasetError(OneCastError):
    exit_code = EXIT_DATA


class ParseError(DatasetError):
    pass


class NumericError(OneCastError):
    exit_code = EXIT_NUMERIC


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, stage: str, step: int, loss: float):
        super().__init__(f"{stage}: non-finite loss {loss!r} at step {step}")
        self.stage = stage
        self.step = step
        self.loss = loss
