"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """A numerical precondition failed (conditioning, regime, resonance)."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class PipelineError(RuntimeError):
    """A multi-stage pipeline failed; carries the failing stage tag."""

    def __init__(self, stage, original):
        super().__init__(f"[{stage}] {original}")
        self.stage = stage
        self.original = original
