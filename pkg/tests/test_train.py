import math

import numpy as np
import pytest

import pulseforge.train as train_mod
from pulseforge.errors import TrainingDiverged
from pulseforge.gradcheck import gradcheck
from pulseforge.inference import build_model
from pulseforge.synth import SynthParams, gen_clip
from pulseforge.tensor import Tensor
from pulseforge.train import AdamState, AdamW, TrainConfig, adamw_step, fit, mse_loss, neg_pearson_loss


def rows(seed=0, shape=(3, 20)):
    return np.random.default_rng(seed).standard_normal(shape)


def test_neg_pearson_examples():
    t = rows()
    assert neg_pearson_loss(Tensor(t), Tensor(t)).item() == pytest.approx(0, abs=1e-9)
    assert neg_pearson_loss(Tensor(-t), Tensor(t)).item() == pytest.approx(2, abs=1e-9)


def test_neg_pearson_constant_row_is_guarded():
    t = rows(shape=(1, 20))
    loss = neg_pearson_loss(Tensor(np.full((1, 20), 3.0)), Tensor(t)).item()
    assert loss == pytest.approx(1.0)


def test_neg_pearson_affine_invariance():
    p, t = rows(1), rows(2)
    a = neg_pearson_loss(Tensor(p), Tensor(t)).item()
    b = neg_pearson_loss(Tensor(2.5 * p + 7), Tensor(t)).item()
    assert a == pytest.approx(b, rel=1e-9)


def test_neg_pearson_gradient():
    p = Tensor(rows(3), requires_grad=True)
    t = Tensor(rows(4))
    assert gradcheck(lambda: neg_pearson_loss(p, t), [p]) < 1e-4
    with pytest.raises(ValueError):
        neg_pearson_loss(Tensor(np.zeros(4)), Tensor(np.zeros(4)))


def test_mse_examples():
    t = rows()
    assert mse_loss(Tensor(t), Tensor(t)).item() == 0
    assert mse_loss(Tensor(t + 1), Tensor(t)).item() == pytest.approx(1)
    p = Tensor(rows(5), requires_grad=True)
    mse_loss(p, Tensor(t)).backward()
    np.testing.assert_allclose(p.grad, 2 * (p.data - t) / t.size)
    with pytest.raises(ValueError):
        mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_adamw_zero_gradient_no_decay():
    p = np.array([1.0, -2.0])
    st = AdamState.zeros_like([p])
    adamw_step([p], [np.zeros(2)], st, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adamw_first_step():
    p = np.array([1.0])
    st = AdamState.zeros_like([p])
    adamw_step([p], [np.array([1.0])], st, lr=0.1, weight_decay=0.0)
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert p[0] == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-12)
    assert p[0] == pytest.approx(0.9, abs=1e-4)


def test_adamw_decay_only():
    p = np.array([2.0])
    adamw_step([p], [np.zeros(1)], AdamState.zeros_like([p]), lr=0.1, weight_decay=0.01)
    assert p[0] == pytest.approx(2.0 * (1 - 0.001))


def adam_reference(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


def test_adamw_without_decay_is_adam():
    grads = [0.3, -1.2, 0.7, 2.0, -0.1]
    p = np.array([0.5])
    st = AdamState.zeros_like([p])
    for g in grads:
        adamw_step([p], [np.array([g])], st, lr=0.01, weight_decay=0.0)
    assert p[0] == pytest.approx(adam_reference(0.5, grads, 0.01), rel=1e-12)


def test_config_defaults_and_validation():
    assert TrainConfig().lr == 1e-3 and TrainConfig().loss == "neg_pearson"
    t2 = TrainConfig(model="t2")
    assert t2.lr == 1e-4 and t2.loss == "mse"
    assert TrainConfig(model="t2", loss="neg_pearson").loss == "neg_pearson"
    for bad in (dict(lr=0.0), dict(epochs=0), dict(model="rnn"), dict(loss="l1")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def tiny_clips(n=3, seconds=2.0):
    return [gen_clip(SynthParams(hr_bpm=60 + 15 * i, duration_s=seconds, noise_std=1.0, seed=i), f"c{i}")
            for i in range(n)]


def tiny_config(**kw):
    opts = {"input_size": 8, "frames": 11, "conv_filters": (4, 8), "dense_hidden": 8}
    return TrainConfig(**{"epochs": 2, "model_options": opts, **kw})


def test_fit_is_deterministic_and_logs():
    clips = tiny_clips()
    a = fit(tiny_config(seed=3), train_clips=clips)
    b = fit(tiny_config(seed=3), train_clips=clips)
    for (n1, x), (n2, y) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
        np.testing.assert_array_equal(x, y)
    assert a.model.to_weights().to_bytes() == b.model.to_weights().to_bytes()
    assert [r["epoch"] for r in a.log] == [1, 2]
    assert a.log_csv().splitlines()[0] == "epoch,train_loss,val_mae"
    c = fit(tiny_config(seed=4), train_clips=clips)
    assert not np.array_equal(c.model.conv1.weight.data, a.model.conv1.weight.data)


def test_fit_does_not_mutate_clips():
    clips = tiny_clips(2)
    val = tiny_clips(1, seconds=10.0)
    before = [c.clip.frames.copy() for c in clips + val]
    fit(tiny_config(epochs=1), train_clips=clips, val_clips=val)
    for c, f in zip(clips + val, before):
        np.testing.assert_array_equal(c.clip.frames, f)


def test_fit_reports_validation_mae():
    r = fit(tiny_config(epochs=1), train_clips=tiny_clips(2), val_clips=tiny_clips(1, seconds=10.0))
    assert np.isfinite(r.log[0]["val_mae"])


def test_fit_rejects_empty_split():
    with pytest.raises(ValueError):
        fit(tiny_config(), train_clips=[])


def test_nan_loss_aborts_with_diagnostics(monkeypatch):
    def poisoned(name, options, seed):
        m = build_model(name, options, seed)
        m.dense2.bias.data[:] = np.nan
        return m

    monkeypatch.setattr(train_mod, "build_model", poisoned)
    with pytest.raises(TrainingDiverged) as exc:
        fit(tiny_config(), train_clips=tiny_clips(1))
    assert exc.value.epoch == 1 and exc.value.batch == 0


def test_transformer_training_step_runs():
    opts = {"input_size": 8, "frames": 6, "patch": 2, "embed_dim": 6, "heads": (3, 3)}
    r = fit(TrainConfig(model="t2", epochs=1, model_options=opts), train_clips=tiny_clips(1))
    assert np.isfinite(r.log[0]["train_loss"])


def test_adamw_wrapper_updates_parameters():
    m = build_model("conv", {"input_size": 8, "frames": 4, "conv_filters": (3, 3), "dense_hidden": 4})
    opt = AdamW(m.parameters(), 0.01)
    before = m.dense2.weight.data.copy()
    m.dense2.weight.grad = np.ones_like(before)
    opt.step()
    assert not np.array_equal(before, m.dense2.weight.data)
    opt.zero_grad()
    assert m.dense2.weight.grad is None
