"""Pulse post-processing: band-pass filtering and heart-rate estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import fft, signal

from .errors import UndefinedHeartRate

HR_BAND = (0.75, 2.5)  # Hz, i.e. 45-150 BPM
MIN_DURATION_S = 10.0
KINDS = ("raw", "derivative", "filtered")


@dataclass(frozen=True)
class PulseTrace:
    samples: np.ndarray
    fps: float
    kind: str = "raw"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError(f"pulse trace must be 1-D, got shape {s.shape}")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(s)):
            raise ValueError("pulse trace contains non-finite samples")
        if self.kind not in KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fps


def _check_duration(x: PulseTrace) -> None:
    # a differenced trace is one sample short of the footage it covers
    if len(x) + 1 < MIN_DURATION_S * x.fps:
        raise ValueError(f"need at least {MIN_DURATION_S:g} s of signal, got {x.duration:.2f} s")


def bandpass(x: PulseTrace, lo: float = HR_BAND[0], hi: float = HR_BAND[1], order: int = 2) -> PulseTrace:
    """Zero-phase Butterworth band-pass (forward-backward)."""
    if hi >= x.fps / 2:
        raise ValueError(f"upper cutoff {hi} Hz is not below Nyquist ({x.fps / 2} Hz)")
    if not 0 < lo < hi:
        raise ValueError(f"invalid band [{lo}, {hi}]")
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=x.fps, output="sos")
    y = signal.sosfiltfilt(sos, x.samples)
    return replace(x, samples=y, kind="filtered")


def spectral_peak(samples: np.ndarray, fps: float, band=HR_BAND) -> float:
    """Frequency (Hz) of the largest magnitude-spectrum bin inside ``band``.

    The signal is zero-padded to a multiple of ``600 * fps`` samples, which
    puts bins on an exact 0.1 BPM grid.
    """
    x = np.asarray(samples, dtype=np.float64)
    x = x - x.mean()
    if not np.any(np.abs(x) > 1e-12 * max(1.0, np.abs(samples).max())):
        raise UndefinedHeartRate("signal has no variation")
    step = int(round(600 * fps))
    nfft = max(1, math.ceil(len(x) / step)) * step
    mag = np.abs(fft.rfft(x, n=nfft))
    freqs = fft.rfftfreq(nfft, d=1.0 / fps)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    if not sel.any():
        raise UndefinedHeartRate("no spectral bins inside the heart-rate band")
    return float(freqs[sel][np.argmax(mag[sel])])


def hr_fft(x: PulseTrace) -> float:
    """Heart rate in BPM from the spectral peak within 0.75-2.5 Hz."""
    _check_duration(x)
    return 60.0 * spectral_peak(x.samples, x.fps)


def hr_peaks(x: PulseTrace) -> float:
    """Heart rate in BPM from the mean interval between detected systolic peaks."""
    _check_duration(x)
    s = x.samples - x.samples.mean()
    sd = s.std()
    if sd == 0:
        raise UndefinedHeartRate("constant signal has no peaks")
    distance = max(1, int(x.fps / HR_BAND[1]))
    peaks, _ = signal.find_peaks(s, distance=distance, prominence=0.3 * sd)
    if len(peaks) < 2:
        raise UndefinedHeartRate(f"found {len(peaks)} peak(s), need at least 2")
    return 60.0 * x.fps / float(np.mean(np.diff(peaks)))
