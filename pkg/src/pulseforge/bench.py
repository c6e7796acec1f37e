"""Per-frame latency and MAC accounting.

Preprocessing and model time are measured separately. The neural models
normalise inside the graph, so their preprocessing column is zero by
construction. The two-branch reference below needs hand-crafted normalised
difference and appearance frames computed outside the network, and that
work is what its preprocessing column measures.
"""
from __future__ import annotations

import csv
import io
import os
import time
from contextlib import contextmanager, nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .baselines import METHODS as BASELINES, spatial_average
from .conv_model import AttentionMask, ConvModelConfig, EfficientPhysC, flop_count
from .dataio import LabeledClip
from .inference import build_model, predict_trace
from .nn import Conv2d, Dense, Module
from .tensor import Tensor, count_macs, no_grad
from .transformer import TransformerConfig, flop_count_t

BENCH_METHODS = ("conv", "t2", "tscan", "pos", "chrom", "ica")
UNSTABLE_RATIO = 0.5


class TwoBranchReference(Module):
    """TS-CAN-like reference: a motion branch gated by masks from an appearance branch.

    Inputs are precomputed normalised difference frames and standardised
    appearance frames, both [N-1, C, H, W]. Same filters and head as
    EfficientPhys-C, so the cost difference is the second branch.
    """

    def __init__(self, config: ConvModelConfig | None = None, seed: int = 0):
        self.config = cfg = config or ConvModelConfig()
        rng = np.random.default_rng(seed)
        f1, f2 = cfg.conv_filters
        k, c = cfg.kernel, cfg.in_channels
        self.m1, self.m2 = Conv2d(c, f1, k, rng), Conv2d(f1, f1, k, rng)
        self.m3, self.m4 = Conv2d(f1, f2, k, rng), Conv2d(f2, f2, k, rng)
        self.a1, self.a2 = Conv2d(c, f1, k, rng), Conv2d(f1, f1, k, rng)
        self.a3, self.a4 = Conv2d(f1, f2, k, rng), Conv2d(f2, f2, k, rng)
        self.att1, self.att2 = AttentionMask(f1, rng), AttentionMask(f2, rng)
        side = cfg.input_size // 4
        self.dense1 = Dense(f2 * side * side, cfg.dense_hidden, rng)
        self.dense2 = Dense(cfg.dense_hidden, 1, rng)

    def _ts(self, x: Tensor, conv: Conv2d) -> Tensor:
        return T.tanh(conv(T.tensor_shift(x, self.config.fold_div)))

    def forward(self, motion: Tensor, appearance: Tensor) -> Tensor:
        m = self._ts(self._ts(motion, self.m1), self.m2)
        a = T.tanh(self.a2(T.tanh(self.a1(appearance))))
        m = T.avgpool2d(m * self.att1(a))
        a = T.avgpool2d(a)
        m = self._ts(self._ts(m, self.m3), self.m4)
        a = T.tanh(self.a4(T.tanh(self.a3(a))))
        m = T.avgpool2d(m * self.att2(a))
        h = T.tanh(self.dense1(T.flatten(m)))
        return self.dense2(h).reshape(-1)


def reference_preprocess(frames: np.ndarray, eps: float = 1e-7) -> tuple[np.ndarray, np.ndarray]:
    """Hand-crafted inputs of the two-branch reference from uint8 [N, H, W, 3].

    Motion: ``(c[t+1] - c[t]) / (c[t+1] + c[t])`` scaled by its clip std.
    Appearance: frames ``1..N-1`` standardised over the clip.
    """
    x = frames.astype(np.float32).transpose(0, 3, 1, 2)
    d = (x[1:] - x[:-1]) / (x[1:] + x[:-1] + eps)
    d /= max(float(d.std()), eps)
    a = x[1:] - x[1:].mean()
    a /= max(float(a.std()), eps)
    return np.ascontiguousarray(d), np.ascontiguousarray(a)


def reference_macs(config: ConvModelConfig) -> int:
    """Per-frame MACs of the two-branch reference (conv, 1x1 mask and dense layers)."""
    k2, c = config.kernel**2, config.in_channels
    f1, f2 = config.conv_filters
    s1 = config.input_size
    s2, s4 = s1 // 2, s1 // 4
    branch = k2 * c * f1 * s1 * s1 + k2 * f1 * f1 * s1 * s1 + k2 * f1 * f2 * s2 * s2 + k2 * f2 * f2 * s2 * s2
    masks = f1 * s1 * s1 + f2 * s2 * s2
    head = f2 * s4 * s4 * config.dense_hidden + config.dense_hidden
    return 2 * branch + masks + head


@dataclass
class BenchRow:
    method: str
    preprocess_ms: float
    model_ms: float
    total_ms: float
    total_std_ms: float
    trials: int
    macs: int | None
    params: int | None
    unstable: bool = False


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    def row(self, method: str) -> BenchRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_table(self) -> str:
        head = ["Method", "Preprocessing", "Model", "Total", "Std", "Trials", "MACs/frame", "Params", ""]
        body = []
        for r in self.rows:
            body.append([
                r.method, f"{r.preprocess_ms:.3f}", f"{r.model_ms:.3f}", f"{r.total_ms:.3f}",
                f"{r.total_std_ms:.3f}", str(r.trials), "-" if r.macs is None else str(r.macs),
                "-" if r.params is None else str(r.params), "unstable" if r.unstable else "",
            ])
        widths = [max(len(x[i]) for x in [head] + body) for i in range(len(head))]
        lines = ["  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip() for line in [head] + body]
        lines.insert(1, "  ".join("-" * w for w in widths).rstrip())
        return "\n".join(lines) + "\n(times in ms per frame)\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(BenchRow.__dataclass_fields__)
        w.writerow(names)
        for r in self.rows:
            w.writerow([getattr(r, n) for n in names])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}


@contextmanager
def pinned_single_cpu(cpu: int | None = None):
    """Pin the process to one CPU for the duration; raise RuntimeError when that is impossible."""
    if not hasattr(os, "sched_setaffinity"):
        raise RuntimeError("this platform cannot pin CPU affinity")
    original = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {min(original) if cpu is None else cpu})
    except OSError as exc:
        raise RuntimeError(f"cannot pin to a single CPU: {exc}") from exc
    try:
        if len(os.sched_getaffinity(0)) != 1:
            raise RuntimeError("CPU affinity was not narrowed to one core")
        yield
    finally:
        os.sched_setaffinity(0, original)


def _runner(method: str, clip: LabeledClip, config: dict | None, seed: int):
    """Return ``(preprocess_fn, model_fn, macs, params)``; model_fn consumes preprocess_fn's output."""
    frames = clip.clip.frames
    size = frames.shape[1]
    opts = dict(config or {})
    if method in ("conv", "t2"):
        opts.setdefault("input_size", size)
        model = build_model(method, opts, seed)
        model.eval()
        macs = flop_count(model.config) if method == "conv" else flop_count_t(model.config)

        def run(x):
            return predict_trace(model, x)

        return (lambda: frames), run, macs, model.param_count()
    if method == "tscan":
        opts.setdefault("input_size", size)
        cfg = ConvModelConfig(**opts)
        model = TwoBranchReference(cfg, seed)

        def run(inputs):
            d, a = inputs
            with no_grad():
                return model(Tensor(d), Tensor(a)).data

        return (lambda: reference_preprocess(frames)), run, reference_macs(cfg), model.param_count()
    if method in BASELINES:
        def run(x):
            rgb = spatial_average(x, clip.fps)
            return BASELINES[method](rgb).samples if method != "ica" else BASELINES[method](rgb, seed=seed).samples

        return (lambda: frames), run, None, None
    raise ValueError(f"unknown method {method!r}; expected one of {BENCH_METHODS}")


def bench_method(method: str, clip: LabeledClip, trials: int = 10, warmup: int = 2,
                 config: dict | None = None, seed: int = 0, pin: bool = True) -> BenchRow:
    """Mean per-frame wall time of ``method`` on ``clip`` over ``trials`` timed runs.

    Runs single-threaded; with ``pin`` the process is also pinned to one CPU
    and the call fails if pinning is impossible. Clips are expected at model
    resolution, so no resize cost is incurred by any method.
    """
    if trials < 10:
        raise ValueError("trials must be >= 10")
    pre_fn, model_fn, macs, params = _runner(method, clip, config, seed)
    n = len(clip.clip)
    neural_or_classic = method != "tscan"
    pre_t, model_t = [], []
    with pinned_single_cpu() if pin else nullcontext(), threadpool_limits(limits=1):
        for i in range(warmup + trials):
            t0 = time.perf_counter()
            x = pre_fn()
            t1 = time.perf_counter()
            model_fn(x)
            t2 = time.perf_counter()
            if i >= warmup:
                pre_t.append(0.0 if neural_or_classic else (t1 - t0) * 1e3 / n)
                model_t.append((t2 - t1) * 1e3 / n)
    pre = np.asarray(pre_t)
    tot = pre + np.asarray(model_t)
    mean = float(tot.mean())
    std = float(tot.std(ddof=1))
    return BenchRow(method, float(pre.mean()), float(np.mean(model_t)), mean, std, trials, macs, params,
                    unstable=bool(std > UNSTABLE_RATIO * mean))


def bench(methods, clip: LabeledClip, trials: int = 10, config: dict | None = None, seed: int = 0,
          pin: bool = True) -> BenchReport:
    report = BenchReport()
    for m in methods:
        report.rows.append(bench_method(m, clip, trials, config=(config or {}).get(m), seed=seed, pin=pin))
    return report


def flop_table(input_size: int = 36, frames: int = 21) -> dict[str, dict[str, int]]:
    """Analytic MACs per frame and parameter counts for the neural models."""
    conv_cfg = ConvModelConfig(input_size=input_size, frames=frames)
    out = {
        "conv": {"macs": flop_count(conv_cfg), "params": EfficientPhysC(conv_cfg).param_count()},
        "tscan": {"macs": reference_macs(conv_cfg), "params": TwoBranchReference(conv_cfg).param_count()},
    }
    for name, cfg in (("t1", TransformerConfig.t1(input_size=input_size, frames=frames)),
                      ("t2", TransformerConfig.t2(input_size=input_size, frames=frames))):
        out[name] = {"macs": flop_count_t(cfg), "params": build_model(name, {"input_size": input_size,
                                                                              "frames": frames}).param_count()}
    return out


def measured_macs(model: Module, *inputs: np.ndarray) -> int:
    """MACs counted on an actual forward pass (an oracle for the analytic counts)."""
    with no_grad(), count_macs() as c:
        model(*[Tensor(x) for x in inputs])
    return c[0]
