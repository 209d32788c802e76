"""Exception hierarchy.

Every error carries the process exit code the command-line front end maps
it to: 2 for configuration problems, 3 for data problems, 4 for numerical
divergence.
"""


class ST2Error(Exception):
    exit_code = 1


class ConfigError(ST2Error):
    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidArgument(ST2Error, ValueError):
    exit_code = 2


class DataError(ST2Error):
    exit_code = 3


class MissingCorpusFile(DataError, FileNotFoundError):
    pass


class EmptyCorpus(DataError):
    pass


class MalformedTestPair(DataError):
    def __init__(self, line_number, message="malformed test pair"):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class EmptySplit(DataError):
    pass


class VocabMismatch(DataError):
    pass


class DegenerateBatch(DataError):
    pass


class DegenerateSentence(DataError):
    pass


class DegenerateGeometry(DataError):
    pass


class RefusingOverwrite(DataError):
    pass


class UnknownTask(DataError):
    pass


class UnknownStyle(DataError):
    pass


class MissingDependency(DataError):
    pass


class CheckpointMismatch(DataError):
    pass


class DivergedAdaptation(ST2Error):
    exit_code = 4

    def __init__(self, step, task_id=None):
        self.step = step
        self.task_id = task_id
        where = f" on task {task_id}" if task_id is not None else ""
        super().__init__(f"non-finite loss at inner step {step}{where}")
