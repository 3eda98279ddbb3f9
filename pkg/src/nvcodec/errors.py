"""Exception hierarchy shared by every module."""


class NVCodecError(Exception):
    """Base class for all package errors."""


class FormatError(NVCodecError):
    """Malformed raw volume or compressed file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(NVCodecError):
    """Input data contains values the codec cannot accept (NaN/Inf)."""


class DegenerateInputError(NVCodecError):
    """Input carries no information to learn, e.g. a constant volume."""


class BudgetError(NVCodecError):
    """Weight budget too small for the smallest admissible network."""


class ConfigurationError(NVCodecError, ValueError):
    """Invalid combination of settings."""


class DivergenceError(NVCodecError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, step, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss
