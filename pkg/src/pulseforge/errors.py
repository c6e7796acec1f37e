"""Exception types raised across the package."""


class CorruptFileError(ValueError):
    """A stored clip or weights file does not match its header."""


class UndefinedHeartRate(ValueError):
    """No heart rate can be read from the given signal."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, batch: int, max_grad: float):
        self.epoch = epoch
        self.batch = batch
        self.max_grad = max_grad
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (max |grad| = {max_grad:.3g})"
        )
