"""Exception taxonomy shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, unknown keys, inconsistent values."""


class UsageError(RuntimeError):
    """An API was called out of contract (stale tape, empty buffer, ...)."""


class TrainingFault(RuntimeError):
    """Non-finite values surfaced during training; carries context about where."""


class IdxParseError(ValueError):
    """Malformed IDX byte stream. Remembers the offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class JointObservabilityError(ValueError):
    """The two per-agent observations do not describe the same world state."""
