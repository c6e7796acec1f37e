import numpy as np
import pytest

from pulseforge.baselines import RgbTrace, chrom, fastica, ica_pulse, pos, spatial_average
from pulseforge.signals import bandpass, hr_fft
from pulseforge.synth import SynthParams, gen_clip

FPS = 30.0


def green_tone_trace(freq=1.5, seconds=60, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * FPS)) / FPS
    rgb = np.tile([180.0, 130.0, 110.0], (len(t), 1))
    rgb[:, 1] += 0.8 * np.sin(2 * np.pi * freq * t)
    rgb += noise * rng.standard_normal(rgb.shape)
    return RgbTrace(rgb, FPS)


def test_trace_validation():
    with pytest.raises(ValueError):
        RgbTrace(np.zeros((10, 2)), FPS)
    with pytest.raises(ValueError):
        RgbTrace(-np.ones((10, 3)), FPS)


def test_spatial_average_examples():
    frames = np.full((4, 6, 6, 3), 90, np.uint8)
    np.testing.assert_array_equal(spatial_average(frames, FPS).samples, 90)
    half = np.zeros((2, 4, 4, 3), np.uint8)
    half[:, :2] = 200
    np.testing.assert_allclose(spatial_average(half, FPS).samples, 100)
    with pytest.raises(ValueError):
        spatial_average(frames, FPS, region="center", crop=0.01)
    center = spatial_average(half, FPS, region="center")
    assert center.samples.shape == (2, 3)


def test_green_variance_grows_with_amplitude():
    variances = []
    for a in (0.0, 0.01, 0.02, 0.04):
        item = gen_clip(SynthParams(hr_bpm=80, duration_s=4, pulse_amplitude=a))
        variances.append(spatial_average(item.clip.frames, FPS).samples[:, 1].var())
    assert all(b > a for a, b in zip(variances, variances[1:]))


@pytest.mark.parametrize("method", [pos, chrom])
def test_constant_trace_gives_zeros(method):
    out = method(RgbTrace(np.full((300, 3), 120.0), FPS))
    assert len(out) == 300
    assert not out.samples.any()


@pytest.mark.parametrize("method", [pos, chrom])
def test_recovers_green_tone(method):
    assert abs(hr_fft(method(green_tone_trace())) - 90.0) <= 1


@pytest.mark.parametrize("method", [pos, chrom])
def test_global_gain_invariance(method):
    tr = green_tone_trace(noise=0.2)
    a = method(tr).samples
    b = method(RgbTrace(3.0 * tr.samples, FPS)).samples
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-9)


def test_zero_mean_channel_windows_are_skipped():
    rgb = green_tone_trace(seconds=12).samples.copy()
    rgb[:100, 2] = 0.0
    out = pos(RgbTrace(rgb, FPS)).samples
    assert not out[:50].any()
    assert out[200:].any()


def ica_mixture(seed=0, permute=None):
    rng = np.random.default_rng(seed)
    t = np.arange(1800) / FPS
    sources = np.stack([np.sin(2 * np.pi * 1.2 * t), rng.laplace(size=t.size), rng.uniform(-1, 1, t.size)])
    mix = np.array([[0.4, 1.0, 0.3], [1.0, 0.5, 0.4], [0.6, 0.3, 1.0]])
    rgb = 120 + 2 * (mix @ sources).T
    if permute is not None:
        rgb = rgb[:, permute]
    return RgbTrace(rgb, FPS)


def test_ica_recovers_mixed_tone():
    assert abs(hr_fft(bandpass(ica_pulse(ica_mixture()))) - 72.0) <= 1


def test_ica_is_deterministic():
    a = ica_pulse(ica_mixture(), seed=4).samples
    b = ica_pulse(ica_mixture(), seed=4).samples
    np.testing.assert_array_equal(a, b)


def test_ica_channel_permutations():
    for perm in ([0, 1, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]):
        assert abs(hr_fft(bandpass(ica_pulse(ica_mixture(permute=perm)))) - 72.0) <= 1


def test_ica_reports_convergence():
    out, info = ica_pulse(ica_mixture(), return_info=True)
    assert info["converged"] and 1 <= info["iterations"] <= 200
    assert len(out) == 1800


def test_fastica_returns_best_iterate_when_capped():
    z = np.random.default_rng(1).standard_normal((3, 500))
    w, converged, iters = fastica(z, max_iter=2, tol=1e-12)
    assert not converged and iters == 2
    np.testing.assert_allclose(w @ w.T, np.eye(3), atol=1e-8)


def test_ica_needs_ten_seconds():
    with pytest.raises(ValueError):
        ica_pulse(green_tone_trace(seconds=5))


@pytest.mark.parametrize("hr", [55.0, 75.0, 120.0])
def test_clean_clips_recovered(hr):
    item = gen_clip(SynthParams(hr_bpm=hr, duration_s=20, noise_std=0.5, seed=int(hr)))
    rgb = spatial_average(item.clip.frames, FPS)
    for method in (pos, chrom, ica_pulse):
        assert abs(hr_fft(bandpass(method(rgb))) - item.hr_gt) <= 2, method.__name__
