"""Reverse-mode autodiff over numpy arrays.

Just enough machinery for a 1-D diffusion U-Net: broadcast arithmetic,
matmul, conv1d, reductions, shape ops, softmax and silu. Each op records
its parents and a closure computing parent gradients; Tensor.backward()
walks the graph in reverse topological order.

float32 is the working precision; build graphs from float64 arrays when
gradient checks need tight tolerances.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import DimMismatch, GraphNotRecorded

_GRAD_ENABLED = True
_CHECK_FINITE = False


def set_finite_checks(enabled: bool) -> None:
    """Assert every op output is finite (debug mode, off by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every reachable requires_grad tensor.

        Only defined for scalar outputs (loss values).
        """
        if self._backward_fn is None:
            raise GraphNotRecorded("backward() on a tensor with no recorded graph")
        if self.data.size != 1:
            raise DimMismatch(f"backward() needs a scalar, got shape {self.data.shape}")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                # out-of-place accumulate: backward closures may return
                # views or share arrays between parents
                parent.grad = g if parent.grad is None else parent.grad + g
            if node is not self:
                node.grad = None
            node._backward_fn = None
            node._parents = ()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor with Adam moment buffers."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.adam_m = None
        self.adam_v = None
        self.step_count = 0


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _from_op(data, parents, backward_fn) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward_fn = None
    out.requires_grad = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- arithmetic ---

def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(out, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _from_op(out, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _from_op(out, (a, b), bwd)


def div(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = a.data / b.data

    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _from_op(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _from_op(-a.data, (a,), lambda g: (-g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * (0.5 / out),)

    return _from_op(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _from_op(out, (a,), bwd)


# --- reductions ---

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return _from_op(out, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=a.data.dtype)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / count, a.data.shape).copy(),)

    return _from_op(out, (a,), bwd)


# --- shape ops ---

def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    return _from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    sizes = [arr.shape[axis] for arr in arrays]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(arrays))
        )

    return _from_op(out, tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _from_op(out, (a,), bwd)


def pad1d(a: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    widths = [(0, 0)] * (a.data.ndim - 1) + [(left, right)]
    out = np.pad(a.data, widths)
    n = a.data.shape[-1]

    def bwd(g):
        return (g[..., left : left + n],)

    return _from_op(out, (a,), bwd)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """np.take with scatter-add backward (embedding lookup, nearest resample)."""
    indices = np.asarray(indices)
    out = np.take(a.data, indices, axis=axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (slice(None),) * axis + (indices,), g)
        return (full,)

    return _from_op(out, (a,), bwd)


def repeat_last(a: Tensor, factor: int) -> Tensor:
    """Repeat each element of the last axis `factor` times (nearest-neighbor
    upsampling); backward sums the repeats in one pass."""
    shape = a.data.shape
    out = np.broadcast_to(
        a.data[..., None], shape + (factor,)
    ).reshape(shape[:-1] + (shape[-1] * factor,))

    def bwd(g):
        return (g.reshape(shape + (factor,)).sum(axis=-1),)

    return _from_op(np.ascontiguousarray(out), (a,), bwd)


# --- matmul ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b for 2-D x 2-D, N-D x 2-D, or equal-batch N-D x N-D."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimMismatch(f"matmul: {ad.shape} @ {bd.shape}")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimMismatch(f"matmul batch dims differ: {ad.shape} vs {bd.shape}")
    out = np.matmul(ad, bd)

    def bwd(g):
        ga = np.matmul(g, bd.swapaxes(-1, -2))
        if ad.ndim > 2:
            ga = _unbroadcast(ga, ad.shape)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = np.matmul(
                ad.reshape(-1, ad.shape[-1]).T, g.reshape(-1, g.shape[-1])
            )
        else:
            gb = np.matmul(ad.swapaxes(-1, -2), g)
            gb = _unbroadcast(gb, bd.shape)
        return ga, gb

    return _from_op(out, (a, b), bwd)


# --- conv1d ---

def conv1d(x: Tensor, weight: Tensor, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis.

    x: [B, C_in, L], weight: [C_out, C_in, K], bias: [C_out] or None.
    Output length floor((L + 2*padding - K) / stride) + 1.
    """
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3 or xd.shape[1] != wd.shape[1]:
        raise DimMismatch(f"conv1d: x {xd.shape}, weight {wd.shape}")
    batch, c_in, length = xd.shape
    c_out, _, k = wd.shape
    l_out = (length + 2 * padding - k) // stride + 1
    if l_out < 1:
        raise DimMismatch(f"conv1d: kernel {k} too long for input {length} (pad {padding})")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    # tap-major contiguous weights so every matmul stays on the BLAS path
    wk = np.ascontiguousarray(wd.transpose(2, 0, 1))
    out = np.zeros((batch, c_out, l_out), dtype=xd.dtype)
    stop = stride * (l_out - 1) + 1
    for b in range(batch):
        for j in range(k):
            out[b] += np.matmul(wk[j], xp[b, :, j : j + stop : stride])
    if bias is not None:
        out += bias.data[None, :, None]

    def bwd(g):
        gwk = np.zeros_like(wk)
        gxp = np.zeros_like(xp)
        wkt = np.ascontiguousarray(wk.transpose(0, 2, 1))
        for b in range(batch):
            gb_ = np.ascontiguousarray(g[b])
            for j in range(k):
                xs = xp[b, :, j : j + stop : stride]
                gwk[j] += np.matmul(gb_, xs.T)
                gxp[b, :, j : j + stop : stride] += np.matmul(wkt[j], gb_)
        gw = gwk.transpose(1, 2, 0).copy()
        gx = gxp[:, :, padding : padding + length] if padding else gxp
        if bias is not None:
            return gx, gw, g.sum(axis=(0, 2))
        return gx, gw

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _from_op(out, parents, bwd)


# --- nonlinearities ---

def silu(a: Tensor) -> Tensor:
    sig = np.negative(a.data)
    with np.errstate(over="ignore"):  # exp overflow saturates to sig = 0
        np.exp(sig, out=sig)
    np.add(sig, 1.0, out=sig)
    np.reciprocal(sig, out=sig)
    out = a.data * sig

    def bwd(g):
        inner = 1.0 - sig
        np.multiply(inner, a.data, out=inner)
        np.add(inner, 1.0, out=inner)
        np.multiply(inner, sig, out=inner)
        np.multiply(inner, g, out=inner)
        return (inner,)

    return _from_op(out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def bwd(g):
        scaled = g * out
        dot = scaled.sum(axis=axis, keepdims=True)
        scaled -= out * dot
        return (scaled,)

    return _from_op(out, (a,), bwd)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
               eps: float = 1e-5) -> Tensor:
    """Fused per-group whitening with scale/shift (hand-written backward)."""
    b, c, length = x.data.shape
    grouped = x.data.reshape(b, groups, -1)
    mean = grouped.mean(axis=2, keepdims=True)
    var = grouped.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = (grouped - mean) * inv_std
    y = normed.reshape(b, c, length)
    out = y * gamma.data[None, :, None] + beta.data[None, :, None]

    def bwd(g):
        g_gamma = np.einsum("bcl,bcl->c", g, y)
        g_beta = g.sum(axis=(0, 2))
        gy = (g * gamma.data[None, :, None]).reshape(b, groups, -1)
        yv = normed
        mean_gy = gy.mean(axis=2, keepdims=True)
        mean_gyy = (gy * yv).mean(axis=2, keepdims=True)
        gx = (gy - mean_gy - yv * mean_gyy) * inv_std
        return gx.reshape(b, c, length), g_gamma, g_beta

    return _from_op(out, (x, gamma, beta), bwd)
