"""Input head that replaces hand-crafted preprocessing: temporal difference + batchnorm."""
from __future__ import annotations

from .nn import BatchNorm2d, Module
from .tensor import Tensor


def frame_diff(clip: Tensor, n_segment: int | None = None) -> Tensor:
    """First forward difference along time: ``out[n] = clip[n + 1] - clip[n]``.

    ``clip`` holds ``B * n_segment`` frames stacked on axis 0; each segment is
    differenced on its own, giving ``B * (n_segment - 1)`` frames.
    """
    n = clip.shape[0] if n_segment is None else n_segment
    if n < 2:
        raise ValueError(f"frame_diff needs at least 2 frames, got {n}")
    if clip.shape[0] % n:
        raise ValueError(f"{clip.shape[0]} frames do not split into segments of {n}")
    rest = clip.shape[1:]
    seg = clip.reshape((-1, n) + rest)
    d = seg[:, 1:] - seg[:, :-1]
    return d.reshape((-1,) + rest)


class NormalizationModule(Module):
    """``batchnorm2d(frame_diff(clip))``.

    The ablation switches drop either stage. Without the difference layer the
    first frame of each segment is discarded instead, so the output length is
    always ``n_segment - 1`` and stays aligned with differenced labels.
    """

    def __init__(self, channels: int, use_diff: bool = True, use_batchnorm: bool = True):
        self.use_diff = use_diff
        self.use_batchnorm = use_batchnorm
        self.bn = BatchNorm2d(channels) if use_batchnorm else None

    def forward(self, clip: Tensor, n_segment: int | None = None) -> Tensor:
        if self.use_diff:
            x = frame_diff(clip, n_segment)
        else:
            n = clip.shape[0] if n_segment is None else n_segment
            if n < 2:
                raise ValueError(f"need at least 2 frames, got {n}")
            rest = clip.shape[1:]
            x = clip.reshape((-1, n) + rest)[:, 1:].reshape((-1,) + rest)
        if self.bn is not None:
            x = self.bn(x)
        return x


def normalization_module(clip: Tensor, module: NormalizationModule | None = None) -> Tensor:
    """Functional form; builds a fresh train-mode module when none is given."""
    if module is None:
        module = NormalizationModule(clip.shape[1])
    return module(clip)


__all__ = ["NormalizationModule", "frame_diff", "normalization_module"]
