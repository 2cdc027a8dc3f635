import math
from typing import Optional

import numpy as np

from ..exceptions import ShapeError
from ..messages import MSG_SHAPE_MISMATCH
from ..tensor import ops
from ..tensor.core import Tensor, as_tensor
from ..tensor.nn import Linear, Module


def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return ops.transpose(t, axes)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # (..., L, h * dh) -> (..., h, L, dh)
    *lead, L, width = t.shape
    t = ops.reshape(t, tuple(lead) + (L, heads, width // heads))
    n = t.ndim
    return ops.transpose(t, list(range(n - 3)) + [n - 2, n - 3, n - 1])


def _merge_heads(t: Tensor) -> Tensor:
    n = t.ndim
    t = ops.transpose(t, list(range(n - 3)) + [n - 2, n - 3, n - 1])
    *lead, L, heads, dh = t.shape
    return ops.reshape(t, tuple(lead) + (L, heads * dh))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> Tensor:
    """
    softmax(q k^T / sqrt(d)) v over the last two axes, with d the per-head key width

    :param q: (..., L, d) queries
    :param k: (..., M, d) keys
    :param v: (..., M, dv) values
    :param heads: number of heads; d and dv must be divisible by it
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(MSG_SHAPE_MISMATCH.format("attention", (q.shape, k.shape), v.shape))
    if q.shape[-1] % heads or v.shape[-1] % heads:
        raise ShapeError(MSG_SHAPE_MISMATCH.format("attention heads", (q.shape[-1], v.shape[-1]), heads))
    if heads > 1:
        q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    weights = ops.softmax(ops.matmul(q, _swap_last(k)) * scale, axis=-1)
    out = ops.matmul(weights, v)
    return _merge_heads(out) if heads > 1 else out


class CrossAttention(Module):
    """
    Queries from one token sequence, keys and values from another.

    No residual and no output projection; ``value_dim`` sets the output width.
    """

    def __init__(self, query_dim: int, context_dim: int, width: int, rng: np.random.Generator,
                 heads: int = 1, value_dim: Optional[int] = None, zero_value: bool = False):
        self.heads = heads
        self.to_q = Linear(query_dim, width, rng, bias=False)
        self.to_k = Linear(context_dim, width, rng, bias=False)
        self.to_v = Linear(context_dim, value_dim or width, rng, bias=False, zero_init=zero_value)

    def forward(self, x: Tensor, context: Tensor) -> Tensor:
        return scaled_dot_attention(self.to_q(x), self.to_k(context), self.to_v(context), self.heads)


class SelfAttention(CrossAttention):
    def __init__(self, dim: int, width: int, rng: np.random.Generator, heads: int = 1):
        super().__init__(dim, dim, width, rng, heads=heads, value_dim=dim)

    def forward(self, x: Tensor) -> Tensor:  # type: ignore[override]
        return super().forward(x, x)
