class ExperimentError(Exception):
    """Base class for harness failures."""


class ConfigError(ExperimentError, ValueError):
    """An experiment config failed validation or configs disagree."""

    def __init__(self, message, errors=None):
        self.errors = errors or {}
        super().__init__(message)

    def __str__(self):
        if not self.errors:
            return super().__str__()
        return f"{super().__str__()}: {self.errors}"
