"""
Semantic prior: a student encoder on degraded inputs is distilled toward a
frozen teacher on clean inputs, and its embedding is projected into a short
context sequence read by cross-attention in the deep UNet stages.
"""
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..constants import CONTEXT_TOKENS, SEM_DIM, TEACHER_SEED
from ..exceptions import ParameterError, ShapeError, ZeroNormError
from ..messages import MSG_NO_CONTEXT, MSG_SHAPE_MISMATCH, MSG_ZERO_NORM
from ..tensor import ops
from ..tensor.core import Tensor, as_tensor
from ..tensor.nn import Conv2d, Linear, Module
from ..util import make_rng, setup_logger
from .attention import CrossAttention, scaled_dot_attention

logger = setup_logger(__name__)

ImageLike = Union[Tensor, np.ndarray]


def as_batch(x: ImageLike) -> Tensor:
    x = as_tensor(x)
    return ops.reshape(x, (1,) + x.shape) if x.ndim == 3 else x


class SemanticEncoder(Module):
    """
    Conv stem, two stride-2 stages, global mean pool and a projection head to
    z in R^dim. When ``context_tokens`` is nonzero the encoder also owns the
    linear map from z to the context sequence.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dim: int = SEM_DIM,
                 context_tokens: int = CONTEXT_TOKENS, context_dim: int = SEM_DIM):
        self.dim = dim
        self.context_tokens = context_tokens
        self.context_dim = context_dim
        self.stem = Conv2d(channels, 16, 3, rng, padding=1)
        self.down1 = Conv2d(16, 32, 3, rng, stride=2, padding=1)
        self.down2 = Conv2d(32, dim, 3, rng, stride=2, padding=1)
        self.head = Linear(dim, dim, rng)
        self.context = Linear(dim, context_tokens * context_dim, rng) if context_tokens else None

    @classmethod
    def teacher(cls, channels: int, dim: int = SEM_DIM, seed: int = TEACHER_SEED) -> "SemanticEncoder":
        """Frozen encoder pinned to ``seed``"""
        return cls(channels, make_rng(seed), dim=dim, context_tokens=0).freeze()  # type: ignore[return-value]

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def forward(self, x: ImageLike) -> Tensor:
        h = ops.silu(self.stem(as_batch(x)))
        h = ops.silu(self.down1(h))
        h = ops.silu(self.down2(h))
        return self.head(h.mean(axis=(2, 3)))

    def trunk_parameters(self):
        return [p for name, p in self.named_parameters() if not name.startswith("context.")]

    def freeze_trunk(self) -> None:
        for p in self.trunk_parameters():
            p.requires_grad = False


@dataclass
class SemanticContext:
    """M context tokens of width D, batched as (B, M, D)"""
    tokens: Tensor

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]


# #####################################

def distill_loss(z_s: Tensor, z_t: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean over the batch of 1 - cos(z_s, z_t); z_t is treated as a constant target"""
    z_s = as_tensor(z_s)
    z_t = Tensor(as_tensor(z_t).data)
    if z_s.shape != z_t.shape or z_s.ndim != 2:
        raise ShapeError(MSG_SHAPE_MISMATCH.format("distill_loss", z_s.shape, z_t.shape))
    for z in (z_s.data, z_t.data):
        zero = np.flatnonzero(ops.norms(z, axis=1) == 0)
        if zero.size:
            raise ZeroNormError(MSG_ZERO_NORM.format(int(zero[0])), int(zero[0]))
    return ops.mean(1.0 - ops.cosine_similarity(z_s, z_t, axis=1))


def mean_cosine(z_s: np.ndarray, z_t: np.ndarray) -> float:
    z_s, z_t = np.asarray(z_s), np.asarray(z_t)
    cos = np.sum(z_s * z_t, axis=1) / (ops.norms(z_s, axis=1) * ops.norms(z_t, axis=1) + 1e-12)
    return float(np.mean(cos))


def extract_semantic(student: SemanticEncoder, x_lq: ImageLike) -> SemanticContext:
    z = student(x_lq)
    if student.context is None:
        raise ParameterError(MSG_NO_CONTEXT)
    tokens = ops.reshape(student.context(z), (z.shape[0], student.context_tokens, student.context_dim))
    return SemanticContext(tokens)


def deep_cross_attention(x: Tensor, context: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor, heads: int = 1) -> Tensor:
    """
    O = softmax(Q K^T / sqrt(d)) V with Q = x w_q, K = context w_k, V = context w_v.

    The caller adds O to ``x``.
    """
    x, context = as_tensor(x), as_tensor(context)
    if x.shape[-1] != w_q.shape[0] or context.shape[-1] != w_k.shape[0] or context.shape[-1] != w_v.shape[0]:
        raise ShapeError(MSG_SHAPE_MISMATCH.format("deep_cross_attention", (x.shape, context.shape),
                                                   (w_q.shape, w_k.shape, w_v.shape)))
    return scaled_dot_attention(ops.matmul(x, w_q), ops.matmul(context, w_k), ops.matmul(context, w_v), heads)


class SemanticCrossAttention(Module):
    """Residual cross-attention from a feature map onto the semantic context; starts as a no-op"""

    def __init__(self, channels: int, context_dim: int, width: int, rng: np.random.Generator, heads: int = 1):
        self.attn = CrossAttention(channels, context_dim, width, rng, heads=heads, value_dim=channels, zero_value=True)

    def forward(self, features: Tensor, context: Tensor) -> Tensor:
        B, C, H, W = features.shape
        tokens = ops.transpose(ops.reshape(features, (B, C, H * W)), (0, 2, 1))
        out = deep_cross_attention(tokens, context, self.attn.to_q.weight, self.attn.to_k.weight,
                                   self.attn.to_v.weight, self.attn.heads)
        return features + ops.reshape(ops.transpose(out, (0, 2, 1)), (B, C, H, W))
