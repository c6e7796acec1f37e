"""Whole-clip inference and per-clip heart-rate evaluation."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .baselines import METHODS as BASELINES, spatial_average
from .conv_model import ConvModelConfig, EfficientPhysC
from .dataio import LabeledClip, to_model_frames
from .errors import UndefinedHeartRate
from .metrics import EvalReport
from .signals import PulseTrace, bandpass, hr_fft
from .tensor import Tensor, no_grad
from .transformer import EfficientPhysT, TransformerConfig
from .weights import ModelWeights

MODEL_NAMES = ("conv", "t1", "t2")


def build_model(name: str, options: dict | None = None, seed: int = 0):
    options = dict(options or {})
    if name == "conv":
        return EfficientPhysC(ConvModelConfig(**options), seed=seed)
    if name == "t1":
        return EfficientPhysT(TransformerConfig.t1(**options), seed=seed)
    if name == "t2":
        return EfficientPhysT(TransformerConfig.t2(**options), seed=seed)
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")


def load_model(weights: ModelWeights | str):
    if not isinstance(weights, ModelWeights):
        weights = ModelWeights.load(weights)
    if EfficientPhysC.config_key in weights.meta:
        return EfficientPhysC.from_weights(weights)
    if EfficientPhysT.config_key in weights.meta:
        return EfficientPhysT.from_weights(weights)
    raise ValueError("weights header carries no model config")


def predict_trace(model, frames: np.ndarray, chunk: int = 240) -> np.ndarray:
    """Eval-mode prediction for a whole clip, one value per consecutive frame pair.

    ``frames`` is either uint8 [N, H, W, 3] or model-ready float [N, C, S, S].
    The clip is processed in chunks padded by the model's temporal reach, so
    the result equals a single forward pass over all N frames.
    """
    if frames.dtype == np.uint8:
        frames = to_model_frames(frames, model.config.input_size)
    n = len(frames)
    if n < 2:
        raise ValueError("need at least 2 frames")
    reach = model.temporal_reach
    out = np.empty(n - 1, dtype=np.float64)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for s in range(0, n - 1, chunk):
                e = min(s + chunk, n - 1)
                a = max(0, s - reach)
                b = min(n - 1, e + reach)
                pred = model(Tensor(frames[a:b + 1])).data
                out[s:e] = pred[s - a:e - a]
    finally:
        model.train(was_training)
    return out


def require_variation(item: LabeledClip) -> None:
    """A clip whose frames never change has all-zero difference frames and no pulse."""
    f = item.clip.frames
    if not (f != f[:1]).any():
        raise UndefinedHeartRate(f"clip {item.clip.clip_id} has no temporal variation")


def model_hr(model, item: LabeledClip) -> float:
    require_variation(item)
    pred = predict_trace(model, item.clip.frames)
    return hr_fft(bandpass(PulseTrace(pred, item.fps, "derivative")))


def baseline_trace(method: str, item: LabeledClip, region: str = "full", seed: int = 0) -> PulseTrace:
    if method not in BASELINES:
        raise ValueError(f"unknown baseline {method!r}")
    rgb = spatial_average(item.clip.frames, item.fps, region)
    if method == "ica":
        return BASELINES[method](rgb, seed=seed)
    return BASELINES[method](rgb)


def baseline_hr(method: str, item: LabeledClip, region: str = "full") -> float:
    return hr_fft(bandpass(baseline_trace(method, item, region)))


def evaluate(clips: list[LabeledClip], methods: dict[str, Callable[[LabeledClip], float]]) -> EvalReport:
    """One report row per (clip, method); clips need ``hr_gt``."""
    report = EvalReport()
    for item in clips:
        if item.hr_gt is None:
            raise ValueError(f"clip {item.clip.clip_id} has no ground-truth HR")
        for name, fn in methods.items():
            report.add(item.clip.clip_id, fn(item), item.hr_gt, name)
    return report
