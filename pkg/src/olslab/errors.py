"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Array shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or missing required key."""


class DataFormatError(ValueError):
    """Malformed on-disk data (bad byte layout, bad label, short file)."""

    def __init__(self, message: str, *, path=None, offset: int | None = None):
        detail = message
        if path is not None:
            detail += f" [file: {path}]"
        if offset is not None:
            detail += f" [offset: {offset}]"
        super().__init__(detail)
        self.path = path
        self.offset = offset


class CheckpointFormatError(ValueError):
    """Checkpoint file is corrupt or structurally invalid."""

    def __init__(self, message: str, *, offset: int | None = None):
        if offset is not None:
            message += f" [offset: {offset}]"
        super().__init__(message)
        self.offset = offset


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint was written by an incompatible format version."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, iteration: int):
        super().__init__(
            f"training diverged (non-finite loss) at epoch {epoch}, iteration {iteration}"
        )
        self.epoch = epoch
        self.iteration = iteration
