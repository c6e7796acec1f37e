"""EfficientPhys-C: single-branch network with tensor-shifted convs and self-attention masks."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Dense, Dropout, Module
from .norm import NormalizationModule
from .tensor import Tensor
from .weights import ModelWeights


@dataclass
class ConvModelConfig:
    input_size: int = 36
    frames: int = 21
    in_channels: int = 3
    conv_filters: tuple[int, int] = (32, 64)
    kernel: int = 3
    dropout: tuple[float, float, float] = (0.25, 0.25, 0.5)
    dense_hidden: int = 128
    fold_div: int = 3
    # ablation switches
    use_diff: bool = True
    use_batchnorm: bool = True
    use_attention: bool = True
    use_tsm: bool = True

    def __post_init__(self):
        self.conv_filters = tuple(self.conv_filters)
        self.dropout = tuple(self.dropout)
        if self.input_size < 8:
            raise ValueError(f"input_size must be >= 8, got {self.input_size}")
        if self.frames < 2:
            raise ValueError(f"frames must be >= 2, got {self.frames}")
        if min(self.conv_filters) < 1 or self.dense_hidden < 1:
            raise ValueError("filter and hidden sizes must be positive")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["dropout"] = list(self.dropout)
        return d


def attention_mask(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Soft spatial mask ``H*W*sigmoid(z) / (2*||sigmoid(z)||_1)`` with ``z`` a 1x1 conv of ``x``.

    The L1 norm runs over each frame's spatial extent, so every frame's mask
    sums to ``H*W/2``.
    """
    h, wd = x.shape[2], x.shape[3]
    s = T.sigmoid(T.conv2d(x, w, b))
    norm = s.sum(axis=(2, 3), keepdims=True)
    return s * (h * wd / 2.0) / norm


class AttentionMask(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv = Conv2d(channels, 1, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return attention_mask(x, self.conv.weight, self.conv.bias)


class EfficientPhysC(Module):
    """Raw frames in, first-derivative pulse out (one value per difference frame)."""

    config_key = "config"

    def __init__(self, config: ConvModelConfig | None = None, seed: int = 0):
        self.config = cfg = config or ConvModelConfig()
        rng = np.random.default_rng(seed)
        f1, f2 = cfg.conv_filters
        k = cfg.kernel
        self.norm = NormalizationModule(cfg.in_channels, cfg.use_diff, cfg.use_batchnorm)
        self.conv1 = Conv2d(cfg.in_channels, f1, k, rng)
        self.conv2 = Conv2d(f1, f1, k, rng)
        self.att1 = AttentionMask(f1, rng) if cfg.use_attention else None
        self.drop1 = Dropout(cfg.dropout[0], seed, 1)
        self.conv3 = Conv2d(f1, f2, k, rng)
        self.conv4 = Conv2d(f2, f2, k, rng)
        self.att2 = AttentionMask(f2, rng) if cfg.use_attention else None
        self.drop2 = Dropout(cfg.dropout[1], seed, 2)
        side = cfg.input_size // 2 // 2
        self.dense1 = Dense(f2 * side * side, cfg.dense_hidden, rng)
        self.drop3 = Dropout(cfg.dropout[2], seed, 3)
        self.dense2 = Dense(cfg.dense_hidden, 1, rng)

    @property
    def temporal_reach(self) -> int:
        """Frames of context each output needs on either side (one per shift)."""
        return 4 if self.config.use_tsm else 0

    def reseed(self, seed: int) -> None:
        for d in (self.drop1, self.drop2, self.drop3):
            d.reseed(seed)

    def _ts_conv(self, x: Tensor, conv: Conv2d, seg: int) -> Tensor:
        if self.config.use_tsm:
            x = T.tensor_shift(x, self.config.fold_div, n_segment=seg)
        return T.tanh(conv(x))

    def forward(self, clip: Tensor, n_segment: int | None = None) -> Tensor:
        """``clip`` is [B*N, C, H, W]; returns [B*(N-1)] predictions."""
        cfg = self.config
        if clip.ndim != 4 or clip.shape[1] != cfg.in_channels or clip.shape[2:] != (cfg.input_size,) * 2:
            raise ValueError(
                f"expected frames of shape [*, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size}], got {clip.shape}"
            )
        n = clip.shape[0] if n_segment is None else n_segment
        x = self.norm(clip, n)
        seg = n - 1
        x = self._ts_conv(x, self.conv1, seg)
        x = self._ts_conv(x, self.conv2, seg)
        if self.att1 is not None:
            x = x * self.att1(x)
        x = self.drop1(T.avgpool2d(x))
        x = self._ts_conv(x, self.conv3, seg)
        x = self._ts_conv(x, self.conv4, seg)
        if self.att2 is not None:
            x = x * self.att2(x)
        x = self.drop2(T.avgpool2d(x))
        x = T.tanh(self.dense1(T.flatten(x)))
        x = self.drop3(x)
        return self.dense2(x).reshape(-1)

    # -- weights ---------------------------------------------------------------
    def to_weights(self) -> ModelWeights:
        return ModelWeights(dict(self.state_dict()), {self.config_key: self.config.to_dict()})

    @classmethod
    def from_weights(cls, weights: ModelWeights) -> EfficientPhysC:
        model = cls(ConvModelConfig(**weights.meta[cls.config_key]))
        model.load_state_dict(weights.tensors)
        return model


def param_count(model: Module) -> int:
    return model.param_count()


def flop_count(config: ConvModelConfig) -> int:
    """Multiply-accumulates per output frame (conv, 1x1 attention and dense layers)."""
    k2 = config.kernel**2
    c = config.in_channels
    f1, f2 = config.conv_filters
    s1 = config.input_size
    s2 = s1 // 2
    s4 = s2 // 2
    macs = k2 * c * f1 * s1 * s1 + k2 * f1 * f1 * s1 * s1
    macs += k2 * f1 * f2 * s2 * s2 + k2 * f2 * f2 * s2 * s2
    if config.use_attention:
        macs += f1 * s1 * s1 + f2 * s2 * s2
    macs += f2 * s4 * s4 * config.dense_hidden + config.dense_hidden
    return macs
