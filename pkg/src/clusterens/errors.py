"""Exception types shared across the package."""


class ClusterensError(Exception):
    """Base class for package-specific failures."""


class LoadError(ClusterensError):
    """A file could not be parsed under its declared format."""


class ConfigError(ClusterensError):
    """Invalid or incomplete run configuration."""


class TrainingError(ClusterensError):
    """Training aborted; carries the failing head index and step."""

    def __init__(self, message, head=None, step=None):
        super().__init__(message)
        self.head = head
        self.step = step


class StageError(ClusterensError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
