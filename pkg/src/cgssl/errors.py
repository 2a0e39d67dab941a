"""Exception types shared across the pipeline stages."""


class CgsslError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CgsslError):
    """Raised when operation inputs violate a documented precondition."""


class InvalidSpecError(CgsslError):
    """Raised for malformed split fractions or configuration values."""


class ArchitectureError(CgsslError):
    """Raised when a model spec is internally inconsistent."""


class IngestionError(CgsslError):
    """Raised when benchmark files are missing or corrupt."""


class DivergenceError(CgsslError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class MissingArtifactError(CgsslError):
    """Raised when a stage depends on an artifact that has not been produced."""


class StageError(CgsslError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
