"""Exception hierarchy shared across the package."""


class GuidedDistillError(Exception):
    """Base class for all package errors."""


class ShapeError(GuidedDistillError, ValueError):
    pass


class LabelError(GuidedDistillError, ValueError):
    pass


class ConfigError(GuidedDistillError, ValueError):
    pass


class DataError(GuidedDistillError, ValueError):
    pass


class MetricError(GuidedDistillError, ValueError):
    pass


class InputError(GuidedDistillError, ValueError):
    pass


class UsageError(GuidedDistillError, RuntimeError):
    pass


class TrainingError(GuidedDistillError, RuntimeError):
    """Raised when a training stage diverges (non-finite loss)."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class MissingArtifactError(GuidedDistillError, FileNotFoundError):
    """An upstream stage artifact required by a later stage is absent."""

    def __init__(self, stage, path):
        super().__init__(f"stage {stage} artifact missing: {path}")
        self.stage = stage
        self.path = path


class ChecksumError(DataError):
    pass
