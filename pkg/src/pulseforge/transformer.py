"""EfficientPhys-T: shifted-window transformer blocks, each preceded by a temporal shift."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .nn import Dense, LayerNorm, Module
from .norm import NormalizationModule
from .tensor import Tensor
from .weights import ModelWeights

MASK_VALUE = -1e9


@dataclass
class TransformerConfig:
    input_size: int = 36
    frames: int = 21
    in_channels: int = 3
    patch: int = 4
    embed_dim: int = 24
    depths: tuple[int, ...] = (2, 1)
    heads: tuple[int, ...] = (3, 6)
    window: int = 3
    mlp_ratio: float = 4.0
    fold_div: int = 3
    use_tsm: bool = True
    use_diff: bool = True
    use_batchnorm: bool = True

    def __post_init__(self):
        self.depths = tuple(self.depths)
        self.heads = tuple(self.heads)
        if len(self.depths) != len(self.heads):
            raise ValueError("depths and heads need one entry per stage")
        if min(self.depths) < 1 or min(self.heads) < 1:
            raise ValueError("depths and heads must be positive")
        if min(self.patch, self.embed_dim, self.window, self.input_size) < 1 or self.mlp_ratio <= 0:
            raise ValueError("sizes must be positive")
        for i, h in enumerate(self.heads):
            if (self.embed_dim * 2**i) % h:
                raise ValueError(f"stage {i}: width {self.embed_dim * 2**i} not divisible by {h} heads")
        if self.frames < 2:
            raise ValueError("frames must be >= 2")

    @classmethod
    def t1(cls, **kw) -> TransformerConfig:
        return cls(**{"depths": (2, 2, 6, 2), "heads": (3, 6, 12, 24), **kw})

    @classmethod
    def t2(cls, **kw) -> TransformerConfig:
        return cls(**{"depths": (2, 1), "heads": (3, 6), **kw})

    def grid_sizes(self) -> list[int]:
        """Token-grid side per stage."""
        g = math.ceil(self.input_size / self.patch)
        sizes = [g]
        for _ in self.depths[1:]:
            g = math.ceil(g / 2)
            sizes.append(g)
        return sizes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["heads"] = list(self.heads)
        return d


def window_partition(x: Tensor, ws: int) -> Tensor:
    """[B, H, W, D] -> [B * (H/ws) * (W/ws), ws*ws, D]."""
    b, h, w, d = x.shape
    x = x.reshape(b, h // ws, ws, w // ws, ws, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, ws * ws, d)


def window_reverse(windows: Tensor, ws: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    d = windows.shape[-1]
    x = windows.reshape(-1, h // ws, w // ws, ws, ws, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, h, w, d)


def effective_window(grid: int, window: int, shifted: bool) -> tuple[int, int]:
    """Window side and shift for a grid; a window spanning the whole grid is never shifted."""
    if grid <= window:
        return grid, 0
    return window, (window // 2 if shifted else 0)


def attention_mask_for(grid: int, ws: int, shift: int) -> np.ndarray | None:
    """Additive [nW, L, L] mask hiding wrapped-around and padded key positions."""
    hp = math.ceil(grid / ws) * ws
    if shift == 0 and hp == grid:
        return None
    region = np.zeros((hp, hp), dtype=np.int64)
    if shift:
        cuts = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
        label = 0
        for hs in cuts:
            for wsl in cuts:
                region[hs, wsl] = label
                label += 1
    padded = np.zeros((hp, hp), dtype=bool)
    padded[grid:, :] = True
    padded[:, grid:] = True
    padded = np.roll(padded, (-shift, -shift), axis=(0, 1))

    def part(a):
        n = hp // ws
        return a.reshape(n, ws, n, ws).transpose(0, 2, 1, 3).reshape(n * n, ws * ws)

    r, pd = part(region), part(padded)
    blocked = (r[:, :, None] != r[:, None, :]) | pd[:, None, :]
    return np.where(blocked, MASK_VALUE, 0.0)


def window_attention(
    windows: Tensor,
    qkv: Dense,
    proj: Dense,
    heads: int,
    mask: np.ndarray | None,
    record: list | None = None,
) -> Tensor:
    """Multi-head self-attention inside each window. ``windows`` is [B', L, D]."""
    bw, L, d = windows.shape
    hd = d // heads
    q_k_v = qkv(windows).reshape(bw, L, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = q_k_v[0], q_k_v[1], q_k_v[2]
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
    if mask is not None:
        nw = mask.shape[0]
        scores = scores.reshape(bw // nw, nw, heads, L, L) + Tensor(mask[None, :, None].astype(scores.dtype))
        scores = scores.reshape(bw, heads, L, L)
    attn = T.softmax(scores, axis=-1)
    if record is not None:
        record.append(attn.data)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(bw, L, d)
    return proj(out)


class WindowBlock(Module):
    """Pre-norm (shifted-)window attention + MLP, both with residuals."""

    def __init__(self, dim: int, heads: int, window: int, shifted: bool, mlp_ratio: float, rng):
        self.heads = heads
        self.window = window
        self.shifted = shifted
        self.ln1 = LayerNorm(dim)
        self.qkv = Dense(dim, 3 * dim, rng)
        self.proj = Dense(dim, dim, rng)
        self.ln2 = LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = Dense(dim, hidden, rng)
        self.fc2 = Dense(hidden, dim, rng)
        self._record: list | None = None

    def forward(self, x: Tensor) -> Tensor:
        _, g, g2, _ = x.shape
        assert g == g2, "square token grids only"
        ws, shift = effective_window(g, self.window, self.shifted)
        hp = math.ceil(g / ws) * ws
        h = self.ln1(x)
        if hp != g:
            h = T.pad(h, [(0, 0), (0, hp - g), (0, hp - g), (0, 0)])
        if shift:
            h = T.roll(h, (-shift, -shift), (1, 2))
        mask = attention_mask_for(g, ws, shift)
        a = window_attention(window_partition(h, ws), self.qkv, self.proj, self.heads, mask, self._record)
        a = window_reverse(a, ws, hp, hp)
        if shift:
            a = T.roll(a, (shift, shift), (1, 2))
        if hp != g:
            a = a[:, :g, :g, :]
        x = x + a
        return x + self.fc2(T.gelu(self.fc1(self.ln2(x))))


class PatchMerging(Module):
    """2x2 neighbourhood concat -> layernorm -> linear halving of the widened channels."""

    def __init__(self, dim: int, rng):
        self.ln = LayerNorm(4 * dim)
        self.reduction = Dense(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        g = x.shape[1]
        if g % 2:
            x = T.pad(x, [(0, 0), (0, 1), (0, 1), (0, 0)])
        parts = [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]]
        return self.reduction(self.ln(T.concat(parts, axis=-1)))


class PatchEmbed(Module):
    def __init__(self, patch: int, in_channels: int, dim: int, rng):
        self.patch = patch
        self.proj = Dense(patch * patch * in_channels, dim, rng)
        self.ln = LayerNorm(dim)

    def forward(self, frames: Tensor) -> Tensor:
        """[T, C, H, W] -> token grid [T, Gh, Gw, D] (zero-padding H, W up to a patch multiple)."""
        t, c, h, w = frames.shape
        p = self.patch
        hp, wp = math.ceil(h / p) * p, math.ceil(w / p) * p
        if (hp, wp) != (h, w):
            frames = T.pad(frames, [(0, 0), (0, 0), (0, hp - h), (0, wp - w)])
        x = frames.reshape(t, c, hp // p, p, wp // p, p).transpose(0, 2, 4, 3, 5, 1)
        x = x.reshape(t, hp // p, wp // p, p * p * c)
        return self.ln(self.proj(x))


def patch_embed(frames: Tensor, module: PatchEmbed) -> Tensor:
    return module(frames)


def tsm_tokens(tokens: Tensor, fold_div: int = 3, n_segment: int | None = None) -> Tensor:
    """Temporal shift of a [T, Gh, Gw, D] token grid along T, channels on the last axis."""
    return T.tensor_shift(tokens, fold_div, n_segment=n_segment, channel_axis=-1)


class EfficientPhysT(Module):
    config_key = "config_t"

    def __init__(self, config: TransformerConfig | None = None, seed: int = 0):
        self.config = cfg = config or TransformerConfig()
        rng = np.random.default_rng(seed)
        self.norm = NormalizationModule(cfg.in_channels, cfg.use_diff, cfg.use_batchnorm)
        self.embed = PatchEmbed(cfg.patch, cfg.in_channels, cfg.embed_dim, rng)
        self.blocks: list[WindowBlock] = []
        self.merges: list[PatchMerging] = []
        dim = cfg.embed_dim
        for stage, (depth, heads) in enumerate(zip(cfg.depths, cfg.heads)):
            if stage > 0:
                self.merges.append(PatchMerging(dim, rng))
                dim *= 2
            for i in range(depth):
                self.blocks.append(WindowBlock(dim, heads, cfg.window, i % 2 == 1, cfg.mlp_ratio, rng))
        self.ln = LayerNorm(dim)
        self.head = Dense(dim, 1, rng)
        self.tsm_calls = 0

    @property
    def temporal_reach(self) -> int:
        return len(self.blocks) if self.config.use_tsm else 0

    def reseed(self, seed: int) -> None:
        pass

    def record_attention(self, on: bool = True) -> list:
        """Start collecting every block's softmax weights; returns the shared list."""
        store: list = [] if on else None
        for b in self.blocks:
            b._record = store
        return store

    def forward(self, clip: Tensor, n_segment: int | None = None) -> Tensor:
        cfg = self.config
        if clip.ndim != 4 or clip.shape[1] != cfg.in_channels or clip.shape[2:] != (cfg.input_size,) * 2:
            raise ValueError(
                f"expected frames of shape [*, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size}], got {clip.shape}"
            )
        n = clip.shape[0] if n_segment is None else n_segment
        x = self.embed(self.norm(clip, n))
        seg = n - 1
        self.tsm_calls = 0
        b = 0
        for stage, depth in enumerate(cfg.depths):
            if stage > 0:
                x = self.merges[stage - 1](x)
            for _ in range(depth):
                if cfg.use_tsm:
                    x = tsm_tokens(x, cfg.fold_div, seg)
                    self.tsm_calls += 1
                x = self.blocks[b](x)
                b += 1
        x = self.ln(x).mean(axis=(1, 2))
        return self.head(x).reshape(-1)

    def to_weights(self) -> ModelWeights:
        return ModelWeights(dict(self.state_dict()), {self.config_key: self.config.to_dict()})

    @classmethod
    def from_weights(cls, weights: ModelWeights) -> EfficientPhysT:
        model = cls(TransformerConfig(**weights.meta[cls.config_key]))
        model.load_state_dict(weights.tensors)
        return model


def flop_count_t(config: TransformerConfig) -> int:
    """Multiply-accumulates per output frame, counting padded tokens where they are computed."""
    c, p, d = config.in_channels, config.patch, config.embed_dim
    grids = config.grid_sizes()
    macs = grids[0] ** 2 * p * p * c * d
    for stage, depth in enumerate(config.depths):
        g = grids[stage]
        if stage > 0:
            macs += g * g * (4 * d) * (2 * d)
            d *= 2
        hidden = int(d * config.mlp_ratio)
        for i in range(depth):
            ws, _ = effective_window(g, config.window, i % 2 == 1)
            hp = math.ceil(g / ws) * ws
            tokens = hp * hp
            L = ws * ws
            macs += tokens * d * 3 * d  # qkv
            macs += 2 * tokens * L * d  # scores and weighted values
            macs += tokens * d * d  # output projection
            macs += 2 * g * g * d * hidden  # mlp
    macs += d
    return macs
