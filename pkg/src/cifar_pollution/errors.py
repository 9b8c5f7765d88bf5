"""Exception types shared across the toolkit."""


class PollutionError(Exception):
    """Base class for all toolkit errors."""


class MalformedFileError(PollutionError, ValueError):
    pass


class InvalidLabelError(PollutionError, ValueError):
    pass


class SizeError(PollutionError, ValueError):
    pass


class EmptyInputError(PollutionError, ValueError):
    pass


class DegenerateStdError(PollutionError, ValueError):
    pass


class ParameterError(PollutionError, ValueError):
    pass


class ShapeError(PollutionError, ValueError):
    pass


class NumericError(PollutionError, ArithmeticError):
    pass


class DivergedRunError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
