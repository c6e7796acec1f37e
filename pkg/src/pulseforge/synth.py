"""Synthetic skin videos with an exactly known blood-volume pulse.

A frame is rendered as::

    frame(t) = I(t) * (base(t) + a * bvp(t) * w * skin * roi(t)) + noise

where ``base`` is a textured static background with a uniformly coloured
skin rectangle, ``roi(t)`` is that rectangle's (anti-aliased, possibly
moving) coverage mask, ``w`` the per-channel pulsatility weights and
``I(t) = 1 + drift``. Values are clipped to [0, 255] and quantised to 8 bits.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .dataio import LabeledClip, VideoClip
from .signals import PulseTrace, spectral_peak

HR_RANGE = (45.0, 150.0)


@dataclass
class SynthParams:
    hr_bpm: float = 75.0
    fps: float = 30.0
    duration_s: float = 10.0
    height: int = 36
    width: int = 36
    skin_roi: tuple[int, int, int, int] | None = None  # y0, x0, y1, x1; default: central half
    pulse_amplitude: float = 0.02
    channel_weights: tuple[float, float, float] = (0.3, 0.8, 0.4)
    skin_color: tuple[float, float, float] = (190.0, 140.0, 115.0)
    background_color: tuple[float, float, float] = (70.0, 90.0, 110.0)
    texture_std: float = 8.0
    noise_std: float = 0.0
    motion: str = "none"  # none | translation
    motion_amplitude: float = 0.0  # px
    motion_freq: float = 0.0  # Hz
    drift_amplitude: float = 0.0  # fraction of intensity
    drift_freq: float = 0.0  # Hz
    shape: str = "sinusoid"  # sinusoid | pulse_template
    seed: int = 0

    def __post_init__(self):
        if not HR_RANGE[0] <= self.hr_bpm <= HR_RANGE[1]:
            raise ValueError(f"hr_bpm {self.hr_bpm} outside {HR_RANGE}")
        if self.pulse_amplitude < 0 or self.noise_std < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.fps <= 0 or self.duration_s <= 0:
            raise ValueError("fps and duration must be positive")
        if self.motion not in ("none", "translation"):
            raise ValueError(f"unknown motion type {self.motion!r}")
        y0, x0, y1, x1 = self.roi
        if not (0 <= y0 < y1 <= self.height and 0 <= x0 < x1 <= self.width):
            raise ValueError(f"skin ROI {self.roi} not inside a {self.height}x{self.width} frame")

    @property
    def roi(self) -> tuple[int, int, int, int]:
        if self.skin_roi is not None:
            return tuple(self.skin_roi)
        h, w = self.height, self.width
        return (h // 4, w // 4, h - h // 4, w - w // 4)

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    def to_dict(self) -> dict:
        return asdict(self)


def _template(phase: np.ndarray) -> np.ndarray:
    """One beat: skewed systolic peak (fast rise, slow decay) plus a small dicrotic bump.

    The widths keep the second harmonic under 0.3 of the fundamental, so the
    fundamental still dominates after differentiation and band-passing.
    """

    def bump(center, rise, decay):
        d = (phase - center + 0.5) % 1.0 - 0.5
        return np.exp(-0.5 * (d / np.where(d < 0, rise, decay)) ** 2)

    return bump(0.2, 0.12, 0.25) + 0.15 * bump(0.65, 0.08, 0.08)


def gen_bvp(hr_bpm: float, fps: float, duration_s: float, shape: str = "sinusoid") -> PulseTrace:
    n = int(round(duration_s * fps))
    t = np.arange(n) / fps
    f = hr_bpm / 60.0
    if shape == "sinusoid":
        x = np.sin(2 * np.pi * f * t)
    elif shape == "pulse_template":
        x = _template((f * t) % 1.0)
        # normalise with the analytic one-period mean so the wave stays exactly periodic
        grid = _template(np.arange(4096) / 4096)
        x = (x - grid.mean()) / (0.5 * (grid.max() - grid.min()))
    else:
        raise ValueError(f"unknown pulse shape {shape!r}")
    return PulseTrace(x, fps)


def _coverage(n: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fraction of each unit pixel [j, j+1) covered by the interval [lo, hi) per frame."""
    j = np.arange(n)[None, :]
    return np.clip(np.minimum(j + 1, hi[:, None]) - np.maximum(j, lo[:, None]), 0.0, 1.0)


def gen_clip(p: SynthParams, clip_id: str = "synthetic") -> LabeledClip:
    rng = np.random.default_rng(p.seed)
    n = p.n_frames
    t = np.arange(n) / p.fps
    bvp = gen_bvp(p.hr_bpm, p.fps, p.duration_s, p.shape)

    h, w = p.height, p.width
    y0, x0, y1, x1 = p.roi
    if p.motion == "translation" and p.motion_amplitude > 0:
        phase = rng.uniform(0, 2 * np.pi)
        dx = p.motion_amplitude * np.sin(2 * np.pi * p.motion_freq * t + phase)
        dy = 0.5 * p.motion_amplitude * np.sin(2 * np.pi * p.motion_freq * t + phase + 1.0)
    else:
        dx = dy = np.zeros(n)
    my = _coverage(h, y0 + dy, y1 + dy)
    mx = _coverage(w, x0 + dx, x1 + dx)
    roi = my[:, :, None] * mx[:, None, :]  # n, h, w

    texture = ndimage.gaussian_filter(rng.standard_normal((h, w, 3)), sigma=(2, 2, 0))
    texture *= p.texture_std / max(texture.std(), 1e-12)
    bg = np.asarray(p.background_color) + texture
    skin = np.asarray(p.skin_color, dtype=np.float64)
    weights = np.asarray(p.channel_weights, dtype=np.float64)

    m = roi[..., None]
    frames = bg * (1.0 - m) + skin * m
    frames += (p.pulse_amplitude * bvp.samples)[:, None, None, None] * (weights * skin) * m
    illum = 1.0 + p.drift_amplitude * np.sin(2 * np.pi * p.drift_freq * t + rng.uniform(0, 2 * np.pi))
    frames *= illum[:, None, None, None]
    if p.noise_std > 0:
        frames += rng.normal(0.0, p.noise_std, frames.shape)

    inside = m[..., 0] > 0.5
    out_of_range = (frames < 0) | (frames > 255)
    saturated = bool(out_of_range.any(axis=-1)[inside].mean() > 0.01) if inside.any() else False
    q = np.clip(np.rint(frames), 0, 255).astype(np.uint8)

    hr_gt = 60.0 * spectral_peak(bvp.samples, p.fps)
    clip = VideoClip(q, p.fps, clip_id)
    return LabeledClip(clip, bvp, hr_gt, saturated=saturated)


def clip_params(master_seed: int, index: int, duration_s: float = 10.0, size: int = 36,
                clean: bool = False, hr_range=(48.0, 144.0)) -> SynthParams:
    """Parameters of clip ``index`` of a corpus; depends only on (master_seed, index)."""
    rng = np.random.default_rng([master_seed, index])
    hr = float(rng.uniform(*hr_range))
    skin = tuple(float(v) for v in np.array([190.0, 140.0, 115.0]) * rng.uniform(0.6, 1.15))
    bgc = tuple(float(v) for v in rng.uniform(30, 200, 3))
    margin_y, margin_x = rng.integers(size // 8, size // 3, 2)
    roi = (int(margin_y), int(margin_x), int(size - margin_y), int(size - margin_x))
    kw = dict(
        hr_bpm=hr, duration_s=duration_s, height=size, width=size, skin_roi=roi,
        pulse_amplitude=float(rng.uniform(0.01, 0.03)), skin_color=skin, background_color=bgc,
        shape="pulse_template" if rng.random() < 0.5 else "sinusoid",
        seed=int(rng.integers(2**31)),
    )
    if clean:
        kw["noise_std"] = float(rng.uniform(0.0, 1.0))
    else:
        kw["noise_std"] = float(rng.uniform(0.0, 4.0))
        if rng.random() < 0.5:
            kw.update(motion="translation", motion_amplitude=float(rng.uniform(0.3, 2.0)),
                      motion_freq=float(rng.uniform(0.1, 0.5)))
        kw.update(drift_amplitude=float(rng.uniform(0.0, 0.05)), drift_freq=float(rng.uniform(0.05, 0.3)))
    return SynthParams(**kw)


@dataclass
class CorpusSpec:
    n_clips: int = 200
    duration_s: float = 10.0
    size: int = 36
    clean: bool = False
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    hr_range: tuple[float, float] = field(default=(48.0, 144.0))

    def split_of(self, index: int) -> str:
        n_train = int(round(self.n_clips * self.split[0]))
        n_val = int(round(self.n_clips * self.split[1]))
        if index < n_train:
            return "train"
        return "val" if index < n_train + n_val else "test"

    def params(self, index: int) -> SynthParams:
        return clip_params(self.seed, index, self.duration_s, self.size, self.clean, self.hr_range)


def gen_corpus(spec: CorpusSpec):
    """Yield ``(index, split, LabeledClip)`` for every clip of the corpus."""
    for i in range(spec.n_clips):
        yield i, spec.split_of(i), gen_clip(spec.params(i), clip_id=f"clip_{i:04d}")
