"""Exception hierarchy. The CLI maps each family onto an exit code."""


class FigmineError(Exception):
    pass


class ValidationError(FigmineError, ValueError):
    """Input data violates a documented constraint."""


class IngestionError(FigmineError):
    """A PDF could not be rasterized."""


class InsufficientDataError(ValidationError):
    pass


class FitError(ValidationError):
    """A model fit produced unphysical parameters."""


class BackendError(FigmineError):
    """Pre-flight failure before a request could be sent."""


class StoreError(FigmineError, OSError):
    """The response store could not persist a row."""
