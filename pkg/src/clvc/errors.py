"""Exception hierarchy.

Every error carries the process exit code the CLI should use for it:
1 usage/configuration, 2 data/format, 3 numeric/training.
"""


class ClvcError(Exception):
    exit_code = 2


class ConfigError(ClvcError):
    exit_code = 1


class ShapeError(ClvcError, ValueError):
    pass


class DataError(ClvcError):
    pass


class AlignmentError(DataError):
    pass


class ParameterError(ClvcError, ValueError):
    pass


class ProsodyError(ClvcError):
    pass


class GenerationError(ClvcError):
    pass


class ModelMismatchError(DataError):
    pass


class FormatError(ClvcError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(ClvcError):
    exit_code = 3
