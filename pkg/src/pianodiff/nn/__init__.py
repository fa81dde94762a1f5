from .layers import Conv1d, GroupNorm, Linear, Module, SelfAttention
from .optim import Adam
from .tensor import (
    Parameter,
    Tensor,
    concat,
    conv1d,
    exp,
    matmul,
    narrow,
    no_grad,
    pad1d,
    reshape,
    set_finite_checks,
    silu,
    softmax,
    sqrt,
    take,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "Adam", "Conv1d", "GroupNorm", "Linear", "Module", "Parameter",
    "SelfAttention", "Tensor", "concat", "conv1d", "exp", "matmul", "narrow",
    "no_grad", "pad1d", "reshape", "set_finite_checks", "silu", "softmax",
    "sqrt", "take", "tmean", "transpose", "tsum",
]
