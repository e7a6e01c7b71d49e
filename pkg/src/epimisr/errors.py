"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes or dtypes are incompatible."""


class ConfigError(ValueError):
    """A configuration value violates an operation's preconditions."""


class GeometryError(ValueError):
    """Degenerate camera geometry (at-camera-plane, singular matrix, bad rig)."""


class ParseError(ValueError):
    """A file could not be parsed; message names the file and location."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
