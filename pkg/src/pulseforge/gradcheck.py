"""Central finite-difference oracle for the tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, index: tuple, eps: float = 1e-5) -> float:
    orig = x.data[index]
    x.data[index] = orig + eps
    fp = fn().item()
    x.data[index] = orig - eps
    fm = fn().item()
    x.data[index] = orig
    return (fp - fm) / (2 * eps)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_points: int | None = 30,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between tape and finite-difference gradients.

    ``fn`` must rebuild the scalar loss from the current data of ``inputs``.
    At most ``max_points`` coordinates per input are probed (chosen with a
    seeded generator); the relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    for x in inputs:
        x.grad = None
    fn().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x, a in zip(inputs, analytic):
        flat = np.arange(x.size)
        if max_points is not None and x.size > max_points:
            flat = rng.choice(x.size, size=max_points, replace=False)
        for f in flat:
            idx = np.unravel_index(f, x.shape)
            n = numeric_grad(fn, x, idx, eps)
            err = abs(a[idx] - n) / max(abs(a[idx]), abs(n), floor)
            worst = max(worst, err)
    return worst


def projected(out_fn: Callable[[], Tensor], seed: int = 1) -> Callable[[], Tensor]:
    """Wrap a tensor-valued function into a scalar via a fixed random projection."""
    cache: dict = {}

    def fn() -> Tensor:
        out = out_fn()
        if "w" not in cache:
            cache["w"] = np.random.default_rng(seed).standard_normal(out.shape)
        return (out * Tensor(cache["w"].astype(out.dtype))).sum()

    return fn
