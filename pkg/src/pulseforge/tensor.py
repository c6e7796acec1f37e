"""Dense array engine with tape-based reverse-mode differentiation.

Every array-valued quantity in the networks is a :class:`Tensor`. Operations
record their inputs and a backward rule when any input requires a gradient;
:meth:`Tensor.backward` walks that record in reverse topological order.

Only the operator set needed by the pulse networks is provided. Elementwise
binary ops follow numpy broadcasting and reduce gradients back to the operand
shape.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True
_mac_count: list[int] | None = None


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates performed by conv/dense/matmul ops.

    Yields a one-element list whose entry holds the running total.
    """
    global _mac_count
    prev = _mac_count
    _mac_count = [0]
    try:
        yield _mac_count
    finally:
        _mac_count = prev


def _add_macs(n: int) -> None:
    if _mac_count is not None:
        _mac_count[0] += int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic properties --------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- autodiff ------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise ValueError("loss is not on the tape (no input requires grad)")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from exc
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def power(x: Tensor, p: float) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g * p * x.data ** (p - 1),)

    return _result(x.data**p, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def backward(g):
        return (g * 0.5 / out,)

    return _result(out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    # split form avoids overflow in exp for large |x|
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v * v * v)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _result(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return _result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.data.size // max(np.asarray(out).size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True),)

    return _result(np.asarray(out), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor, start: int = 1) -> Tensor:
    return reshape(x, x.shape[:start] + (-1,))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing only; advanced indexing is not differentiable here."""
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _result(np.array(out, copy=True), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in xs], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tuple(xs), backward)


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    widths = tuple(tuple(w) for w in widths)
    out = np.pad(x.data, widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return _result(out, (x,), lambda g: (g[sl],))


def roll(x: Tensor, shift, axis) -> Tensor:
    out = np.roll(x.data, shift, axis=axis)
    neg = tuple(-s for s in shift) if isinstance(shift, (tuple, list)) else -shift
    return _result(out, (x,), lambda g: (np.roll(g, neg, axis=axis),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (no broadcasting of batch dims)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    _add_macs(out.size * a.shape[-1])

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ w + b`` with ``w`` of shape [in, out]."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense expects last dim {w.shape[0]}, got {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    _add_macs(x2.shape[0] * w.shape[0] * w.shape[1])
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result(out.reshape(lead + (w.shape[1],)), parents, backward)


# ---------------------------------------------------------------------------
# convolutional building blocks
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: str = "same") -> Tensor:
    """Stride-1 2D cross-correlation on [N, Cin, H, W] with an odd square kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    n, cin, h, wd = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {wcin}")
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d needs an odd square kernel, got {k}x{k2}")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding mode {padding!r}")
    p = k // 2 if padding == "same" else 0
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {k} larger than input {h}x{wd}")
    if k == 1:
        wmat = w.data.reshape(cout, cin)
        xm = x.data.reshape(n, cin, h * wd)
        out = np.matmul(wmat, xm)
        if b is not None:
            out += b.data[:, None]
        _add_macs(n * h * wd * cin * cout)

        def backward1(g):
            gm = g.reshape(n, cout, h * wd)
            gx = np.matmul(wmat.T, gm).reshape(x.shape) if x.requires_grad else None
            gw = None
            if w.requires_grad:
                gw = np.einsum("nop,nip->oi", gm, xm).reshape(w.shape)
            if b is None:
                return gx, gw
            return gx, gw, gm.sum(axis=(0, 2))

        parents = (x, w) if b is None else (x, w, b)
        return _result(out.reshape(n, cout, h, wd), parents, backward1)

    # channels-last internally: activations produced here are NHWC in memory,
    # so the transposes below are views on the hot path
    xh = x.data.transpose(0, 2, 3, 1)
    xp = np.pad(xh, ((0, 0), (p, p), (p, p), (0, 0))) if p else xh
    cols = sliding_window_view(xp, (k, k), axis=(1, 2))  # n, ho, wo, cin, k, k
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * cin)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    _add_macs(n * ho * wo * cin * k * k * cout)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gx = gw = None
        if w.requires_grad:
            gw = (gm.T @ cols).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(n, ho, wo, k, k, cin)
            gxp = np.zeros((n, h + 2 * p, wd + 2 * p, cin), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + ho, j:j + wo, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, p:p + h, p:p + wd, :] if p else gxp
            gx = gx.transpose(0, 3, 1, 2)
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2), parents, backward)


def avgpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping average pooling; trailing rows/columns that do not fill a window are dropped."""
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ValueError(f"avgpool2d window {size} larger than input {h}x{w}")
    crop = x.data[:, :, : ho * size, : wo * size]
    out = crop.reshape(n, c, ho, size, wo, size).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros_like(x.data)
        rep = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
        gx[:, :, : ho * size, : wo * size] = rep
        return (gx,)

    return _result(out, (x,), backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel standardization over (N, H, W), then ``gamma * xhat + beta``.

    In training mode ``running_mean``/``running_var`` are updated in place.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ValueError(f"batchnorm2d channel mismatch: {x.shape} vs {gamma.shape}")
    c = x.shape[1]
    axes = (0, 2, 3)
    shape = (1, c, 1, 1)
    if training:
        m = x.data.size // c
        if m < 2:
            raise ValueError("batchnorm2d in train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            scale = (gamma.data * inv).reshape(shape)
            if training:
                m = x.data.size // c
                gx = scale / m * (m * g - gb.reshape(shape) - xhat * gg.reshape(shape))
            else:
                gx = scale * g
        return gx, gg, gb

    return _result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the elementwise affine."""
    d = x.shape[-1]
    if gamma.shape != (d,):
        raise ValueError(f"layernorm expects gamma of shape ({d},), got {gamma.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv / d * (d * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def tensor_shift(
    x: Tensor, fold_div: int = 3, n_segment: int | None = None, channel_axis: int = 1
) -> Tensor:
    """Temporal channel shift along axis 0.

    Axis 0 holds ``B * n_segment`` frames (``n_segment`` defaults to all of
    them). The first ``C // fold_div`` channels take the next frame's value,
    the second chunk the previous frame's; frames past either end read zero.
    """
    c = x.shape[channel_axis]
    if c < fold_div:
        raise ValueError(f"tensor_shift needs at least {fold_div} channels, got {c}")
    t = x.shape[0] if n_segment is None else n_segment
    if x.shape[0] % t:
        raise ValueError(f"{x.shape[0]} frames do not split into segments of {t}")
    fold = c // fold_div
    ax = channel_axis % x.ndim

    def shift(v: np.ndarray, sign: int) -> np.ndarray:
        v5 = np.moveaxis(v, ax, 1).reshape((-1, t) + tuple(np.moveaxis(v, ax, 1).shape[1:]))
        out = np.zeros_like(v5)
        out[:, :, 2 * fold:] = v5[:, :, 2 * fold:]
        if sign > 0:  # forward pass
            out[:, :-1, :fold] = v5[:, 1:, :fold]
            out[:, 1:, fold:2 * fold] = v5[:, :-1, fold:2 * fold]
        else:  # adjoint
            out[:, 1:, :fold] = v5[:, :-1, :fold]
            out[:, :-1, fold:2 * fold] = v5[:, 1:, fold:2 * fold]
        moved_shape = (v.shape[0],) + out.shape[2:]
        return np.moveaxis(out.reshape(moved_shape), 1, ax)

    return _result(shift(x.data, 1), (x,), lambda g: (shift(g, -1),))


__all__ = [
    "Tensor",
    "add",
    "as_tensor",
    "avgpool2d",
    "batchnorm2d",
    "concat",
    "conv2d",
    "count_macs",
    "dense",
    "div",
    "dropout",
    "exp",
    "flatten",
    "gelu",
    "getitem",
    "layernorm",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "pad",
    "power",
    "relu",
    "reshape",
    "roll",
    "sigmoid",
    "softmax",
    "sqrt",
    "sub",
    "tanh",
    "tensor_shift",
    "transpose",
    "tsum",
]
