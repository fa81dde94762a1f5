"""Parameterized layers built on the autodiff tensors.

Covers exactly what the U-Net needs: linear, 1-D conv, group norm and
pre-norm residual self-attention. Modules hold Parameters; traversal for
optimizers and checkpoints walks attributes in definition order.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimMismatch
from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast all parameters in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.weight = Parameter(_uniform(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise DimMismatch(f"linear: input {x.shape} vs weight {self.weight.shape}")
        return T.matmul(x, T.transpose(self.weight, (1, 0))) + self.bias


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding=None,
                 zero_init: bool = False, dtype=np.float32):
        if padding is None:
            if kernel_size % 2 == 0:
                raise DimMismatch("same-padding conv1d needs an odd kernel")
            padding = kernel_size // 2
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        if zero_init:
            w = np.zeros((out_channels, in_channels, kernel_size), dtype=dtype)
        else:
            w = _uniform(rng, (out_channels, in_channels, kernel_size), fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    """Normalize per group of channels over (channels_in_group, length)."""

    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5, dtype=np.float32):
        if channels % groups != 0:
            raise DimMismatch(f"group norm: {channels} channels not divisible by {groups}")
        self.groups = groups
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))

    def normalized(self, x: Tensor) -> Tensor:
        """The whitened activations, before scale/shift (composed from
        primitives; the fused op in __call__ must agree with this)."""
        b, c, length = x.shape
        g = self.groups
        grouped = T.reshape(x, (b, g, (c // g) * length))
        mean = T.tmean(grouped, axis=2, keepdims=True)
        centered = grouped - mean
        var = T.tmean(centered * centered, axis=2, keepdims=True)
        normed = centered / T.sqrt(var + self.eps)
        return T.reshape(normed, (b, c, length))

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class SelfAttention(Module):
    """Pre-norm multi-head self-attention over the time axis, residual added.

    No positional encoding: the block is equivariant to time permutation.
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 groups: int = 8, dtype=np.float32):
        if channels % heads != 0:
            raise DimMismatch(f"attention: {channels} channels not divisible by {heads} heads")
        self.heads = heads
        self.norm = GroupNorm(channels, groups, dtype=dtype)
        self.qkv = Conv1d(channels, 3 * channels, 1, rng, dtype=dtype)
        self.proj = Conv1d(channels, channels, 1, rng, dtype=dtype)

    def _attend(self, x: Tensor):
        b, c, length = x.shape
        h = self.heads
        dh = c // h
        qkv = self.qkv(self.norm(x))  # [B, 3C, L]
        q = T.narrow(qkv, 1, 0, c)
        k = T.narrow(qkv, 1, c, c)
        v = T.narrow(qkv, 1, 2 * c, c)

        def split_heads(t):  # [B, C, L] -> [B*H, L, Dh]
            t = T.reshape(t, (b, h, dh, length))
            t = T.transpose(t, (0, 1, 3, 2))
            return T.reshape(t, (b * h, length, dh))

        q, k, v = split_heads(q), split_heads(k), split_heads(v)
        q = q * (1.0 / np.sqrt(dh))  # scale before the L x L product
        scores = T.matmul(q, T.transpose(k, (0, 2, 1)))
        weights = T.softmax(scores, axis=-1)  # rows sum to 1
        mixed = T.matmul(weights, v)  # [B*H, L, Dh]
        mixed = T.reshape(mixed, (b, h, length, dh))
        mixed = T.transpose(mixed, (0, 1, 3, 2))
        return T.reshape(mixed, (b, c, length)), weights

    def attention_weights(self, x: Tensor) -> np.ndarray:
        """Softmax weights [B*heads, L, L] (diagnostics)."""
        with T.no_grad():
            _, weights = self._attend(x)
        return weights.data

    def __call__(self, x: Tensor) -> Tensor:
        mixed, _ = self._attend(x)
        return x + self.proj(mixed)
