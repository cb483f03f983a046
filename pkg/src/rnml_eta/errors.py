"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so each class carries the
code it should surface as.
"""


class RnmlError(Exception):
    exit_code = 1


class InvalidArgumentError(RnmlError, ValueError):
    exit_code = 2


class ConfigurationError(RnmlError, ValueError):
    exit_code = 2


class DataCorruptionError(RnmlError, ValueError):
    exit_code = 3


class DegenerateDataError(RnmlError, ValueError):
    exit_code = 3


class MissingPrerequisiteError(RnmlError, FileNotFoundError):
    exit_code = 4


class NonFiniteError(RnmlError, FloatingPointError):
    """Raised when a loss, prediction or gradient stops being finite."""

    exit_code = 3
