"""Shared exception types."""


class ConfigError(ValueError):
    """Bad configuration: shape mismatch, malformed fault, invalid config file."""


class RunAborted(RuntimeError):
    """Training run hit a non-finite quantity and cannot continue."""


class CheckpointError(ValueError):
    """Checkpoint container is unreadable, corrupted, or version-incompatible."""
