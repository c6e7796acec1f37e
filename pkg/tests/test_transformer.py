import numpy as np
import pytest

from pulseforge import tensor as T
from pulseforge.gradcheck import gradcheck, projected
from pulseforge.inference import load_model, predict_trace
from pulseforge.nn import Dense
from pulseforge.tensor import Tensor, count_macs, no_grad
from pulseforge.transformer import (
    EfficientPhysT, PatchEmbed, TransformerConfig, WindowBlock, attention_mask_for, effective_window,
    flop_count_t, patch_embed, tsm_tokens, window_attention, window_partition, window_reverse,
)


@pytest.mark.parametrize("grid,ws", [(6, 3), (6, 2), (4, 4), (9, 3)])
def test_partition_reverse_identity(grid, ws):
    x = np.random.default_rng(0).standard_normal((2, grid, grid, 5))
    w = window_partition(Tensor(x), ws)
    assert w.shape == (2 * (grid // ws) ** 2, ws * ws, 5)
    np.testing.assert_array_equal(window_reverse(w, ws, grid, grid).data, x)


def test_uniform_attention_gives_token_mean():
    rng = np.random.default_rng(1)
    d = 4
    tokens = rng.standard_normal((1, 9, d))
    qkv = Dense(d, 3 * d, rng)
    qkv.weight.data = np.zeros((d, 3 * d))
    qkv.weight.data[:, 2 * d:] = np.eye(d)  # q = k = 0, v = x
    qkv.bias.data = np.zeros(3 * d)
    proj = Dense(d, d, rng)
    proj.weight.data = np.eye(d)
    proj.bias.data = np.zeros(d)
    out = window_attention(Tensor(tokens), qkv, proj, heads=1, mask=None).data
    np.testing.assert_allclose(out, np.broadcast_to(tokens.mean(axis=1, keepdims=True), out.shape), atol=1e-12)


def test_patch_embed_grid_and_zero_frames():
    rng = np.random.default_rng(2)
    pe = PatchEmbed(4, 3, 24, rng).to(np.float64)
    out = patch_embed(Tensor(np.zeros((2, 3, 36, 36))), pe).data
    assert out.shape == (2, 9, 9, 24)
    b = pe.proj.bias.data
    expected = (b - b.mean()) / np.sqrt(b.var() + 1e-5)
    np.testing.assert_allclose(out, np.broadcast_to(expected, out.shape), atol=1e-6)


def test_patch_embed_pads_remainders():
    pe = PatchEmbed(4, 3, 6, np.random.default_rng(0))
    assert pe(Tensor(np.zeros((1, 3, 10, 10), np.float32))).shape == (1, 3, 3, 6)


def test_patch_embed_gradient():
    rng = np.random.default_rng(3)
    pe = PatchEmbed(2, 3, 6, rng).to(np.float64)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    fn = projected(lambda: pe(x))
    assert gradcheck(fn, [x, pe.proj.weight, pe.ln.gamma]) < 1e-4


def test_tsm_tokens_matches_channel_first_shift():
    x = np.random.default_rng(4).standard_normal((5, 3, 3, 6))
    a = tsm_tokens(Tensor(x)).data
    b = T.tensor_shift(Tensor(x.transpose(0, 3, 1, 2))).data.transpose(0, 2, 3, 1)
    np.testing.assert_array_equal(a, b)
    assert not tsm_tokens(Tensor(np.zeros((3, 2, 2, 6)))).data.any()
    with pytest.raises(ValueError):
        tsm_tokens(Tensor(np.zeros((3, 2, 2, 2))))


def test_tsm_tokens_worked_example():
    x = np.array([[1, 2, 3], [4, 5, 6]], dtype=float).reshape(2, 1, 1, 3)
    np.testing.assert_array_equal(tsm_tokens(Tensor(x)).data.reshape(2, 3), [[4, 0, 3], [0, 2, 6]])


def test_effective_window():
    assert effective_window(9, 3, True) == (3, 1)
    assert effective_window(9, 3, False) == (3, 0)
    assert effective_window(3, 3, True) == (3, 0)
    assert effective_window(2, 3, True) == (2, 0)


def test_shift_mask_blocks_wrapped_regions():
    m = attention_mask_for(6, 3, 1)
    assert m.shape == (4, 9, 9)
    assert not m[0].any()  # top-left window never wraps
    assert (m[3] < 0).any()
    assert attention_mask_for(6, 3, 0) is None
    # padding: 5x5 grid in 3x3 windows hides the padded keys
    pm = attention_mask_for(5, 3, 0)
    assert pm is not None and (pm[3] < 0).sum() > 0


@pytest.mark.parametrize("grid,shifted", [(6, False), (6, True), (5, True), (9, True)])
def test_attention_rows_sum_to_one(grid, shifted):
    rng = np.random.default_rng(5)
    blk = WindowBlock(6, 2, 3, shifted, 2.0, rng)
    store = []
    blk._record = store
    blk(Tensor(rng.standard_normal((2, grid, grid, 6)).astype(np.float32)))
    attn = store[0]
    np.testing.assert_allclose(attn.sum(axis=-1), 1.0, rtol=1e-5)


def test_block_gradient():
    rng = np.random.default_rng(6)
    blk = WindowBlock(6, 2, 3, True, 2.0, rng).to(np.float64)
    x = Tensor(rng.standard_normal((1, 6, 6, 6)), requires_grad=True)
    fn = projected(lambda: blk(x))
    assert gradcheck(fn, [x, blk.qkv.weight, blk.fc1.weight, blk.ln1.gamma], max_points=15) < 1e-3


def test_t2_has_three_blocks_and_three_shifts():
    model = EfficientPhysT(TransformerConfig.t2())
    assert len(model.blocks) == 3
    model(Tensor(np.random.default_rng(7).uniform(size=(4, 3, 36, 36)).astype(np.float32)))
    assert model.tsm_calls == 3
    assert [b.shifted for b in model.blocks] == [False, True, False]
    assert len(EfficientPhysT(TransformerConfig.t1()).blocks) == 12


def test_tsm_adds_no_parameters():
    for cfg in (TransformerConfig.t2, TransformerConfig.t1):
        assert EfficientPhysT(cfg()).param_count() == EfficientPhysT(cfg(use_tsm=False)).param_count()


def test_flop_count_matches_counted_macs():
    for cfg in (TransformerConfig.t2(), TransformerConfig.t2(input_size=18, patch=2), TransformerConfig.t1()):
        model = EfficientPhysT(cfg).eval()
        with no_grad(), count_macs() as c:
            model(Tensor(np.zeros((3, 3, cfg.input_size, cfg.input_size), np.float32)))
        assert c[0] == 2 * flop_count_t(cfg)
    assert flop_count_t(TransformerConfig.t2()) < flop_count_t(TransformerConfig.t1())


def test_constant_video_interior_is_constant():
    model = EfficientPhysT(TransformerConfig.t2(input_size=12, frames=12)).eval()
    out = model(Tensor(np.full((12, 3, 12, 12), 0.3, np.float32))).data
    r = model.temporal_reach
    np.testing.assert_allclose(out[r:len(out) - r], out[r], rtol=1e-6)


def test_resolution_mismatch():
    with pytest.raises(ValueError):
        EfficientPhysT()(Tensor(np.zeros((4, 3, 20, 20))))


def test_chunked_inference_and_round_trip(tmp_path):
    model = EfficientPhysT(TransformerConfig.t2(input_size=12), seed=3).eval()
    x = np.random.default_rng(8).uniform(size=(30, 3, 12, 12)).astype(np.float32)
    with no_grad():
        full = model(Tensor(x)).data
    np.testing.assert_allclose(predict_trace(model, x, chunk=8), full, rtol=1e-5, atol=1e-6)
    path = tmp_path / "t.weights"
    model.to_weights().save(path)
    back = load_model(path)
    assert isinstance(back, EfficientPhysT)
    np.testing.assert_array_equal(predict_trace(back, x), predict_trace(model, x))
