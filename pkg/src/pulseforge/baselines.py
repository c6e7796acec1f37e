"""Classical pulse extraction from spatially averaged RGB traces (POS, CHROM, ICA)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .signals import HR_BAND, PulseTrace, bandpass


@dataclass(frozen=True)
class RgbTrace:
    samples: np.ndarray  # [T, 3] mean R, G, B
    fps: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 3:
            raise ValueError(f"RGB trace must be [T, 3], got {s.shape}")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValueError("RGB trace values must be finite and nonnegative")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return len(self.samples)


def spatial_average(frames: np.ndarray, fps: float, region: str = "full", crop: float = 0.5) -> RgbTrace:
    """Per-frame channel means of [N, H, W, 3] frames.

    ``region="center"`` averages a centred box covering ``crop`` of each side.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3 or frames.shape[0] == 0:
        raise ValueError(f"expected nonempty [N, H, W, 3] frames, got {frames.shape}")
    if region == "center":
        h, w = frames.shape[1:3]
        ch, cw = int(round(h * crop)), int(round(w * crop))
        if ch < 1 or cw < 1:
            raise ValueError(f"crop fraction {crop} leaves an empty region")
        y0, x0 = (h - ch) // 2, (w - cw) // 2
        frames = frames[:, y0:y0 + ch, x0:x0 + cw]
    elif region != "full":
        raise ValueError(f"unknown region {region!r}")
    return RgbTrace(frames.mean(axis=(1, 2), dtype=np.float64), fps)


def _window_len(trace: RgbTrace, window_s: float) -> int:
    n = math.ceil(window_s * trace.fps - 1e-9)
    if n < 2:
        raise ValueError(f"window of {window_s} s at {trace.fps} fps is under 2 samples")
    return n


def _overlap_add(trace: RgbTrace, window_s: float, combine) -> PulseTrace:
    """Slide a window with hop 1, temporally normalise, combine to 1-D, overlap-add.

    ``combine`` maps normalised windows [nW, 3, L] to pulse segments [nW, L].
    Windows containing a zero-mean channel contribute nothing.
    """
    rgb = trace.samples
    t = len(rgb)
    n = _window_len(trace, window_s)
    out = np.zeros(t)
    if t < n:
        return PulseTrace(out, trace.fps)
    win = sliding_window_view(rgb, n, axis=0)  # nW, 3, L
    mu = win.mean(axis=2, keepdims=True)
    ok = np.all(mu > 0, axis=(1, 2))
    cn = win / np.where(mu > 0, mu, 1.0)
    h = combine(cn)
    h = h - h.mean(axis=1, keepdims=True)
    h[~ok] = 0.0
    nw = h.shape[0]
    for j in range(n):
        out[j:j + nw] += h[:, j]
    return PulseTrace(out, trace.fps)


def _ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sa, sb = a.std(axis=1, keepdims=True), b.std(axis=1, keepdims=True)
    return np.divide(sa, sb, out=np.zeros_like(sa), where=sb > 0)


def pos(trace: RgbTrace, window_s: float = 1.6) -> PulseTrace:
    """Plane-orthogonal-to-skin projection."""

    def combine(cn):
        r, g, b = cn[:, 0], cn[:, 1], cn[:, 2]
        s1 = g - b
        s2 = -2 * r + g + b
        return s1 + _ratio(s1, s2) * s2

    return _overlap_add(trace, window_s, combine)


def chrom(trace: RgbTrace, window_s: float = 1.6) -> PulseTrace:
    """Chrominance projection with an adaptive ratio."""

    def combine(cn):
        r, g, b = cn[:, 0], cn[:, 1], cn[:, 2]
        x = 3 * r - 2 * g
        y = 1.5 * r + g - 1.5 * b
        return x - _ratio(x, y) * y

    return _overlap_add(trace, window_s, combine)


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    d, e = np.linalg.eigh(w @ w.T)
    d = np.clip(d, np.finfo(float).tiny, None)
    return (e * (1.0 / np.sqrt(d))) @ e.T @ w


def fastica(z: np.ndarray, seed: int = 0, max_iter: int = 200, tol: float = 1e-4):
    """Symmetric fixed-point ICA with a tanh contrast on whitened data ``z`` [k, T].

    Returns ``(W, converged, iterations)``; when the tolerance is never met the
    iterate with the smallest update is returned.
    """
    k, t = z.shape
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((k, k)))
    best, best_lim = w, np.inf
    for it in range(1, max_iter + 1):
        g = np.tanh(w @ z)
        gp = 1.0 - g * g
        w_new = _sym_decorrelate(g @ z.T / t - gp.mean(axis=1)[:, None] * w)
        lim = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if lim < best_lim:
            best, best_lim = w, lim
        if lim < tol:
            return w, True, it
    return best, False, max_iter


def _band_fraction(x: np.ndarray, fps: float) -> float:
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / fps)
    total = spec[1:].sum()
    if total == 0:
        return 0.0
    band = (freqs >= HR_BAND[0]) & (freqs <= HR_BAND[1])
    return float(spec[band].sum() / total)


def ica_pulse(trace: RgbTrace, seed: int = 0, return_info: bool = False):
    """Blind source separation of the RGB trace; returns the most pulse-like source.

    The chosen source maximises the fraction of spectral power inside the
    heart-rate band and is sign-aligned with the band-passed green channel.
    With ``return_info`` a dict with ``converged`` and ``iterations`` is also
    returned.
    """
    if len(trace) < 10 * trace.fps:
        raise ValueError("ICA needs at least 10 s of samples")
    x = signal.detrend(trace.samples.T, axis=1)
    sd = x.std(axis=1, keepdims=True)
    x = x / np.where(sd > 0, sd, 1.0)
    cov = x @ x.T / x.shape[1]
    d, e = np.linalg.eigh(cov)
    keep = d > 1e-10 * d.max()
    if not keep.any():
        raise ValueError("RGB trace has no variation")
    whiten = (e[:, keep] / np.sqrt(d[keep])).T
    z = whiten @ x
    w, converged, iters = fastica(z, seed=seed)
    sources = w @ z
    fracs = [_band_fraction(s, trace.fps) for s in sources]
    best = sources[int(np.argmax(fracs))]
    green = bandpass(PulseTrace(trace.samples[:, 1], trace.fps)).samples
    if np.dot(bandpass(PulseTrace(best, trace.fps)).samples, green) < 0:
        best = -best
    out = PulseTrace(best, trace.fps)
    if return_info:
        return out, {"converged": converged, "iterations": iters}
    return out


METHODS = {"pos": pos, "chrom": chrom, "ica": ica_pulse}
