"""Exception types shared across the pipeline.

The CLI maps each family onto an exit code: configuration problems exit
with 2, bad input data with 3 and numerical failures with 4.
"""


class MfHodgError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(MfHodgError, ValueError):
    exit_code = 2


class DataError(MfHodgError, ValueError):
    exit_code = 3


class NumericError(MfHodgError, ArithmeticError):
    exit_code = 4


class StageError(MfHodgError):
    """Wraps an error raised inside one pipeline stage, keeping its exit code."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{stage}] {cause}")
