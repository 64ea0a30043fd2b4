class TaskError(ValueError):
    """Base class for toy-problem failures."""


class UnknownTask(TaskError):
    """No task is registered under the requested name."""


class DatasetFormatError(TaskError):
    """A dataset CSV is missing columns or holds bad values."""
