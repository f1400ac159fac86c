"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, I/O errors -> 2,
contract/integrity violations -> 3.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation's contract."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class ConfigError(ValueError):
    """A configuration field is missing or outside its allowed domain."""


class CheckpointFormatError(ValueError):
    """Checkpoint file is not in the expected binary format (bad magic/version)."""


class CheckpointIntegrityError(ValueError):
    """Checkpoint contents disagree with the model configuration, or the file is truncated."""


class PngDecodeError(OSError):
    """A PNG file could not be read or decoded."""

    def __init__(self, path, reason):
        super().__init__(f"cannot decode PNG {path}: {reason}")
        self.path = path


class ImageTooSmall(Exception):
    """Image cannot supply a training patch; the caller should pick another image."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries a diagnostic of the recent trajectory."""

    def __init__(self, step, lr, loss_tail):
        tail = ", ".join(f"{v:.6g}" for v in loss_tail)
        super().__init__(
            f"non-finite loss at step {step} (lr={lr:g}); recent losses: [{tail}]"
        )
        self.step = step
        self.lr = lr
        self.loss_tail = list(loss_tail)
