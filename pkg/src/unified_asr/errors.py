"""Exception types shared by every module.

Each class carries the process exit status the CLI reports for it.
"""


class UasrError(Exception):
    exit_code = 1


class ConfigError(UasrError):
    exit_code = 2


class InvalidInputError(UasrError, ValueError):
    exit_code = 3


class DegenerateInputError(InvalidInputError):
    pass


class NumericalError(UasrError, ArithmeticError):
    exit_code = 4


class CheckpointError(UasrError):
    """Raised for unreadable, truncated or mismatched checkpoint files."""

    exit_code = 3

    def __init__(self, message, section=None):
        super().__init__(message)
        self.section = section


class PartitionMissingError(CheckpointError):
    def __init__(self, partition):
        super().__init__(f"partition missing: {partition}", section="params")
        self.partition = partition


class DataIOError(UasrError, OSError):
    exit_code = 5
