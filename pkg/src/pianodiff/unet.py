"""Conditional 1-D U-Net predicting the diffusion v-target.

Waveform length is fixed per model. The pitch+loudness condition matrix
is nearest-resampled along time to each encoder level's resolution and
concatenated channel-wise before that level's convolutions; skip
connections tie each encoder level to its decoder mirror; self-attention
sits at the configured (deepest) levels. Diffusion time enters every
residual block through a sinusoidal embedding and a per-block projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimMismatch
from .nn import tensor as T
from .nn.layers import Conv1d, GroupNorm, Linear, Module, SelfAttention
from .nn.tensor import Tensor

TIME_FEATURES = 64


@dataclass(frozen=True)
class UNetConfig:
    input_length: int = 16384
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4, 4)
    downsample: int = 4
    attention_levels: tuple[int, ...] = (2, 3)
    heads: int = 4
    groups: int = 8
    cond_width: int = 128
    cond_frames: int = 32
    time_dim: int = 128

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        object.__setattr__(self, "attention_levels", tuple(self.attention_levels))
        n = len(self.channel_mults)
        total_down = self.downsample ** (n - 1)
        if self.input_length % total_down != 0:
            raise ConfigError(
                f"input_length {self.input_length} not divisible by {total_down}"
            )
        deepest = self.input_length // total_down
        if deepest % self.cond_frames != 0:
            raise ConfigError(
                f"condition timeline {self.cond_frames} does not divide the "
                f"deepest resolution {deepest}"
            )
        for lvl in self.attention_levels:
            if not 0 <= lvl < n:
                raise ConfigError(f"attention level {lvl} outside 0..{n - 1}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_mults)

    @property
    def level_lengths(self) -> tuple[int, ...]:
        return tuple(self.input_length // self.downsample**i
                     for i in range(len(self.channel_mults)))

    def to_dict(self) -> dict:
        return {
            "input_length": self.input_length,
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "downsample": self.downsample,
            "attention_levels": list(self.attention_levels),
            "heads": self.heads,
            "groups": self.groups,
            "cond_width": self.cond_width,
            "cond_frames": self.cond_frames,
            "time_dim": self.time_dim,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "UNetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown unet config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("channel_mults", "attention_levels"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def time_features(t: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features of diffusion time t in [0,1], shape [B, 64]."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = TIME_FEATURES // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1).astype(dtype)


class ResBlock(Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int, groups: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.norm1 = GroupNorm(c_in, groups, dtype=dtype)
        self.conv1 = Conv1d(c_in, c_out, 3, rng, dtype=dtype)
        self.time_proj = Linear(time_dim, c_out, rng, dtype=dtype)
        self.norm2 = GroupNorm(c_out, groups, dtype=dtype)
        self.conv2 = Conv1d(c_out, c_out, 3, rng, dtype=dtype)
        self.skip = Conv1d(c_in, c_out, 1, rng, dtype=dtype) if c_in != c_out else None

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(T.silu(self.norm1(x)))
        shift = self.time_proj(T.silu(temb))
        h = h + T.reshape(shift, (shift.shape[0], shift.shape[1], 1))
        h = self.conv2(T.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class UNet1d(Module):
    def __init__(self, config: UNetConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        chs = config.channels
        n = len(chs)
        cond_w = config.cond_width

        self.time_in = Linear(TIME_FEATURES, config.time_dim, rng, dtype=dtype)
        self.time_out = Linear(config.time_dim, config.time_dim, rng, dtype=dtype)
        self.stem = Conv1d(1, chs[0], 5, rng, dtype=dtype)

        self.enc_blocks = []
        self.enc_attn = []
        self.downs = []
        for i in range(n):
            c_prev = chs[0] if i == 0 else chs[i - 1]
            self.enc_blocks.append(
                ResBlock(c_prev + cond_w, chs[i], config.time_dim, config.groups, rng, dtype)
            )
            self.enc_attn.append(
                SelfAttention(chs[i], config.heads, rng, config.groups, dtype)
                if i in config.attention_levels else None
            )
            if i < n - 1:
                self.downs.append(
                    Conv1d(chs[i], chs[i], config.downsample, rng,
                           stride=config.downsample, padding=0, dtype=dtype)
                )

        self.mid = ResBlock(chs[-1], chs[-1], config.time_dim, config.groups, rng, dtype)

        self.dec_blocks = []
        self.dec_attn = []
        self.ups = []
        for i in range(n - 1, -1, -1):
            self.dec_blocks.append(
                ResBlock(2 * chs[i], chs[i], config.time_dim, config.groups, rng, dtype)
            )
            self.dec_attn.append(
                SelfAttention(chs[i], config.heads, rng, config.groups, dtype)
                if i in config.attention_levels else None
            )
            if i > 0:
                self.ups.append(Conv1d(chs[i], chs[i - 1], 3, rng, dtype=dtype))

        self.head_norm = GroupNorm(chs[0], config.groups, dtype=dtype)
        # zero-init: the untrained model predicts v = 0 everywhere
        self.head = Conv1d(chs[0], 1, 5, rng, zero_init=True, dtype=dtype)

        # config invariants make every level length an exact multiple of
        # the condition timeline, so nearest resampling is a pure repeat
        self._cond_factor = [
            length // config.cond_frames for length in config.level_lengths
        ]

    def _resampled_cond(self, cond_cl: Tensor, level: int) -> Tensor:
        factor = self._cond_factor[level]
        return T.repeat_last(cond_cl, factor) if factor > 1 else cond_cl

    def __call__(self, x: Tensor, t: np.ndarray, cond: Tensor) -> Tensor:
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.input_length:
            raise DimMismatch(f"expected input [B, 1, {cfg.input_length}], got {x.shape}")
        if cond.ndim != 3 or cond.shape[1] != cfg.cond_frames or cond.shape[2] != cfg.cond_width:
            raise DimMismatch(
                f"expected condition [B, {cfg.cond_frames}, {cfg.cond_width}], got {cond.shape}"
            )
        if cond.shape[0] != x.shape[0]:
            raise DimMismatch("batch sizes of input and condition differ")

        temb = self.time_out(T.silu(self.time_in(
            Tensor(time_features(t, dtype=x.dtype))
        )))
        cond_cl = T.transpose(cond, (0, 2, 1))  # [B, width, frames]

        n = len(cfg.channels)
        h = self.stem(x)
        skips = []
        for i in range(n):
            h = T.concat([h, self._resampled_cond(cond_cl, i)], axis=1)
            h = self.enc_blocks[i](h, temb)
            if self.enc_attn[i] is not None:
                h = self.enc_attn[i](h)
            skips.append(h)
            if i < n - 1:
                h = self.downs[i](h)

        h = self.mid(h, temb)

        for j, i in enumerate(range(n - 1, -1, -1)):
            h = T.concat([h, skips[i]], axis=1)
            h = self.dec_blocks[j](h, temb)
            if self.dec_attn[j] is not None:
                h = self.dec_attn[j](h)
            if i > 0:
                h = T.repeat_last(h, cfg.downsample)  # nearest-neighbor upsample
                h = self.ups[j](h)

        return self.head(T.silu(self.head_norm(h)))
