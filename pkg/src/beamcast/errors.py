"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for a tensor operation."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class TraceParseError(ValueError):
    """A trace CSV file failed to parse or validate."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or inconsistent with the target store."""


class DataError(ValueError):
    """Input data is missing or inconsistent (snapshots, checkpoints, datasets)."""


class NonFiniteError(FloatingPointError):
    """A forward pass or training step produced NaN or Inf."""
