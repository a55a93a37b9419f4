"""
Exception hierarchy for the UCK toolkit.

Every error raised deliberately by the package derives from UckError and
carries the process exit code the command line uses for its failure class.
"""


class UckError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(UckError, ValueError):
    """One or more configuration values failed validation.

    Args:
        errors: Every validation message collected, not only the first one.
    """

    exit_code = 2

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__('; '.join(self.errors))


class TaskMismatchError(ConfigError):
    """A dataset's task does not fit the model's classifier head."""


class DataIOError(UckError):
    """A dataset, checkpoint, report or manifest could not be read or written."""

    exit_code = 3


class CheckpointError(DataIOError):
    """Checkpoint file is corrupt, truncated, or of an unknown format."""


class NumericalError(UckError, ArithmeticError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""

    exit_code = 4


class ShapeError(UckError, ValueError):
    """Operand shapes are incompatible for the requested operation."""

    exit_code = 4


class GenerationError(UckError):
    """Dataset generation could not satisfy its constraints (e.g. class balance)."""

    exit_code = 5
