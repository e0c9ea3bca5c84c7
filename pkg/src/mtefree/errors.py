"""Exception hierarchy shared across modules."""


class MteError(Exception):
    """Base class; ``module`` names the stage that failed."""

    module = "mtefree"
    hint = ""

    def __init__(self, message, *, hint=None):
        super().__init__(message)
        if hint is not None:
            self.hint = hint


class ConfigError(MteError):
    module = "config"


class DataError(MteError):
    module = "data"


class EstimationError(MteError):
    module = "estimation"

    def __init__(self, message, *, module=None, hint=None):
        super().__init__(message, hint=hint)
        if module is not None:
            self.module = module
