import numpy as np
import pytest

from pulseforge.gradcheck import gradcheck, projected
from pulseforge.norm import NormalizationModule, frame_diff, normalization_module
from pulseforge.synth import SynthParams, gen_clip
from pulseforge.dataio import to_model_frames
from pulseforge.tensor import Tensor


def test_scalar_clip_example():
    clip = Tensor(np.array([1.0, 3.0, 6.0]).reshape(3, 1, 1, 1))
    np.testing.assert_array_equal(frame_diff(clip).data.ravel(), [2, 3])


def test_constant_video_gives_zeros():
    clip = Tensor(np.full((5, 3, 4, 4), 0.7))
    assert not frame_diff(clip).data.any()
    assert not normalization_module(clip).data.any()


def test_linear_ramp_gives_constant_frames():
    c = np.random.default_rng(0).standard_normal((3, 4, 4))
    clip = Tensor(np.arange(6)[:, None, None, None] * c)
    d = frame_diff(clip).data
    assert d.shape == (5, 3, 4, 4)
    np.testing.assert_allclose(d, np.broadcast_to(c, d.shape), atol=1e-12)


def test_too_short_raises():
    with pytest.raises(ValueError):
        frame_diff(Tensor(np.zeros((1, 3, 2, 2))))


def test_segments_are_differenced_independently():
    x = np.random.default_rng(1).standard_normal((8, 2, 3, 3))
    d = frame_diff(Tensor(x), n_segment=4).data
    expected = np.concatenate([np.diff(x[:4], axis=0), np.diff(x[4:], axis=0)])
    np.testing.assert_allclose(d, expected)


def test_static_image_is_removed_and_linear():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 6, 3, 4, 4))
    static = rng.standard_normal((1, 3, 4, 4))
    np.testing.assert_allclose(frame_diff(Tensor(a + static)).data, frame_diff(Tensor(a)).data, atol=1e-12)
    np.testing.assert_allclose(
        frame_diff(Tensor(2 * a - b)).data, 2 * frame_diff(Tensor(a)).data - frame_diff(Tensor(b)).data, atol=1e-12
    )


def test_init_output_is_standardised():
    x = np.random.default_rng(3).uniform(0, 1, (12, 3, 8, 8))
    out = normalization_module(Tensor(x)).data
    m = out.mean(axis=(0, 2, 3))
    v = out.var(axis=(0, 2, 3))
    assert np.all(np.abs(m) < 1e-5)
    assert np.all(np.abs(v - 1) < 1e-3)


def test_invariant_to_affine_relighting():
    x = np.random.default_rng(4).uniform(0, 1, (10, 3, 6, 6))
    a = normalization_module(Tensor(x)).data
    b = normalization_module(Tensor(3.5 * x + 0.2)).data
    # only the batchnorm epsilon breaks exact invariance
    np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-4)


def test_synthetic_clip_stays_in_range():
    item = gen_clip(SynthParams(hr_bpm=80, duration_s=2, noise_std=1.0))
    out = normalization_module(Tensor(to_model_frames(item.clip.frames, 36))).data
    assert np.all(np.isfinite(out))
    assert np.abs(out).max() < 6


def test_ablation_without_diff_keeps_length():
    x = np.random.default_rng(5).standard_normal((12, 3, 4, 4))
    mod = NormalizationModule(3, use_diff=False, use_batchnorm=False)
    out = mod(Tensor(x), 6).data
    np.testing.assert_array_equal(out, np.concatenate([x[1:6], x[7:12]]))


def test_gradient():
    x = Tensor(np.random.default_rng(6).standard_normal((5, 3, 3, 3)), requires_grad=True)
    mod = NormalizationModule(3).to(np.float64)
    mod.bn.gamma.data[:] = [0.5, 1.5, 2.0]
    fn = projected(lambda: mod(x))
    assert gradcheck(fn, [x, mod.bn.gamma, mod.bn.beta]) < 1e-4
