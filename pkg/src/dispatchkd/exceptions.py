"""Exception types raised across the package."""


class DispatchError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DispatchError, ValueError):
    """An argument violates an operation's precondition."""


class WavFormatError(DispatchError):
    """A WAV file is malformed or uses an unsupported encoding."""


class PatchGridError(DispatchError):
    """A patch grid's index bookkeeping is internally inconsistent."""


class TrainingDivergedError(DispatchError):
    """Training produced a non-finite loss.

    ``last_checkpoint`` holds the most recent finite gains (or ``None``)
    and ``step`` the step at which divergence was detected.
    """

    def __init__(self, message, step=None, last_checkpoint=None):
        super().__init__(message)
        self.step = step
        self.last_checkpoint = last_checkpoint
