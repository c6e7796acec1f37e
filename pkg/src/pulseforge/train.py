"""Losses, AdamW and the deterministic training loop."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .dataio import ClipManifest, LabeledClip, label_preprocess, to_model_frames, window_starts
from .errors import TrainingDiverged
from .inference import build_model, model_hr
from .tensor import Tensor

log = logging.getLogger(__name__)

DEFAULT_LR = {"conv": 1e-3, "t1": 1e-4, "t2": 1e-4}
DEFAULT_LOSS = {"conv": "neg_pearson", "t1": "mse", "t2": "mse"}


def neg_pearson_loss(pred: Tensor, target: Tensor, eps: float = 1e-8) -> Tensor:
    """Mean over rows of ``1 - pearson(pred_row, target_row)``."""
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ValueError(f"expected matching [B, L] inputs, got {pred.shape} and {target.shape}")
    pc = pred - pred.mean(axis=1, keepdims=True)
    tc = target - target.mean(axis=1, keepdims=True)
    num = (pc * tc).sum(axis=1)
    den = T.sqrt((pc * pc).sum(axis=1) * (tc * tc).sum(axis=1) + eps)
    return (1.0 - num / den).mean()


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return (d * d).mean()


LOSSES = {"neg_pearson": neg_pearson_loss, "mse": mse_loss}


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.01) -> None:
    """One AdamW update, in place: decoupled decay, then bias-corrected Adam."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class AdamW:
    def __init__(self, params, lr: float, weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                   self.lr, *self.betas, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainConfig:
    model: str = "conv"
    lr: float | None = None
    epochs: int = 5
    batch_size: int = 4
    weight_decay: float = 0.01
    loss: str | None = None
    seed: int = 0
    stride: int | None = None  # defaults to the window length
    model_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in DEFAULT_LR:
            raise ValueError(f"unknown model {self.model!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.model]
        if self.loss is None:
            self.loss = DEFAULT_LOSS[self.model]
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    model: object
    log: list[dict]

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mae"])
        for row in self.log:
            w.writerow([row["epoch"], f"{row['train_loss']:.6f}", f"{row['val_mae']:.4f}"])
        return buf.getvalue()


def _val_mae(model, clips: list[LabeledClip]) -> float:
    if not clips:
        return float("nan")
    errs = []
    for item in clips:
        try:
            errs.append(abs(model_hr(model, item) - item.hr_gt))
        except ValueError:
            errs.append(float("inf"))
    return float(np.mean(errs))


def fit(config: TrainConfig, manifest: ClipManifest | None = None, *,
        train_clips: list[LabeledClip] | None = None,
        val_clips: list[LabeledClip] | None = None) -> FitResult:
    """Train a model; every source of randomness derives from ``config.seed``.

    Clips come from the manifest's train/val splits unless given directly.
    Returns the final-epoch model and a per-epoch log (train loss, val MAE).
    """
    if train_clips is None:
        if manifest is None:
            raise ValueError("need a manifest or explicit clips")
        train_clips = manifest.load_split("train")
        if val_clips is None:
            val_clips = manifest.load_split("val")
    val_clips = val_clips or []
    if not train_clips:
        raise ValueError("training split is empty")

    model = build_model(config.model, config.model_options, seed=config.seed)
    window = model.config.frames
    size = model.config.input_size
    stride = config.stride or window

    # frames are converted once per clip; windows are (clip, start) index pairs
    frames, targets, index = [], [], []
    for ci, item in enumerate(train_clips):
        if item.bvp is None:
            raise ValueError(f"training clip {item.clip.clip_id} has no bvp")
        frames.append(to_model_frames(item.clip.frames, size))
        for s in window_starts(len(item.clip), window, stride):
            index.append((ci, s))
            targets.append(label_preprocess(item.bvp.samples[s:s + window]).astype(np.float32))
    if not index:
        raise ValueError("no training windows; clips are shorter than the window")

    opt = AdamW(model.parameters(), config.lr, config.weight_decay)
    loss_fn = LOSSES[config.loss]
    history = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(index))
        losses = []
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            batch = order[start:start + config.batch_size]
            x = np.concatenate([frames[index[k][0]][index[k][1]:index[k][1] + window] for k in batch])
            y = np.stack([targets[k] for k in batch])
            pred = model(Tensor(x), window).reshape(len(batch), window - 1)
            loss = loss_fn(pred, Tensor(y))
            opt.zero_grad()
            loss.backward()
            lv = loss.item()
            if not np.isfinite(lv):
                gmax = max((float(np.abs(p.grad).max()) for p in opt.params if p.grad is not None), default=0.0)
                raise TrainingDiverged(epoch, bi, gmax)
            opt.step()
            losses.append(lv)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mae": _val_mae(model, val_clips)}
        log.info("epoch %d: loss %.4f, val MAE %.2f BPM", epoch, row["train_loss"], row["val_mae"])
        history.append(row)
    model.eval()
    return FitResult(model, history)
