import numpy as np
import pytest

from pulseforge.errors import UndefinedHeartRate
from pulseforge.signals import PulseTrace, bandpass, hr_fft, hr_peaks

FPS = 30.0


def tone(freq, seconds=30.0, fps=FPS, phase=0.3):
    t = np.arange(int(seconds * fps)) / fps
    return PulseTrace(np.sin(2 * np.pi * freq * t + phase), fps)


def test_trace_validation():
    with pytest.raises(ValueError):
        PulseTrace(np.array([1.0, np.nan]), FPS)
    with pytest.raises(ValueError):
        PulseTrace(np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        PulseTrace(np.zeros((2, 2)), FPS)


def test_passband_amplitude_preserved():
    y = bandpass(tone(1.5, 60)).samples
    trimmed = y[300:-300]
    assert abs(np.abs(trimmed).max() - 1.0) < 0.05
    assert bandpass(tone(1.5)).kind == "filtered"


def gain_db(freq):
    y = bandpass(tone(freq, 120)).samples[600:-600]
    return 20 * np.log10(np.sqrt(2) * y.std())


def test_drift_attenuated():
    assert gain_db(0.1) <= -20


def test_dc_removed():
    y = bandpass(PulseTrace(np.full(900, 5.0), FPS)).samples
    assert np.abs(y).max() < 1e-3 * 5.0


def test_cutoff_above_nyquist_rejected():
    with pytest.raises(ValueError):
        bandpass(PulseTrace(np.zeros(100), 4.0))


def test_bandpass_near_idempotent_in_band():
    y1 = bandpass(tone(1.5, 60)).samples[300:-300]
    y2 = bandpass(bandpass(tone(1.5, 60))).samples[300:-300]
    assert abs(np.sum(y2**2) / np.sum(y1**2) - 1) < 0.02


@pytest.mark.parametrize("freq,bpm", [(1.5, 90.0), (1.25, 75.0), (0.8, 48.0), (2.4, 144.0)])
def test_hr_fft_pure_tones(freq, bpm):
    assert hr_fft(tone(freq)) == pytest.approx(bpm, abs=1e-9)


def test_hr_fft_of_first_difference():
    x = tone(1.5)
    d = PulseTrace(np.diff(x.samples), FPS, "derivative")
    assert hr_fft(d) == pytest.approx(90.0, abs=1e-9)


def test_hr_fft_scale_and_sign_invariant():
    x = tone(1.1, 20)
    base = hr_fft(x)
    assert hr_fft(PulseTrace(3 * x.samples, FPS)) == base
    assert hr_fft(PulseTrace(-x.samples, FPS)) == base


def test_hr_fft_errors():
    with pytest.raises(UndefinedHeartRate):
        hr_fft(PulseTrace(np.zeros(600), FPS))
    with pytest.raises(ValueError):
        hr_fft(tone(1.5, 5))


def test_hr_peaks_clean_and_noisy():
    assert hr_peaks(bandpass(tone(1.5))) == pytest.approx(90.0, abs=1)
    for seed in range(10):
        noisy = tone(1.5).samples + 0.05 * np.random.default_rng(seed).standard_normal(900)
        assert abs(hr_peaks(bandpass(PulseTrace(noisy, FPS))) - 90.0) <= 2


def test_hr_peaks_constant_raises():
    with pytest.raises(UndefinedHeartRate):
        hr_peaks(PulseTrace(np.ones(600), FPS))


@pytest.mark.parametrize("freq", [0.9, 1.2, 1.7, 2.2])
def test_fft_and_peaks_agree(freq):
    x = bandpass(tone(freq))
    assert abs(hr_fft(x) - hr_peaks(x)) <= 1
