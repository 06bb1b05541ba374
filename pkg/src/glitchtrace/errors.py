"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad inputs or configuration, detected before any work is done."""


class TrainingDivergenceError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")


class ChainIntegrityError(RuntimeError):
    """A persisted artifact does not match the hash recorded in its manifest."""


class StageError(RuntimeError):
    """A pipeline stage failed; wraps the cause and names the stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
