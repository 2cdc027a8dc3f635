"""
Structural prior.

Three cue maps (depth, segmentation, DoG) go through a per-modality 1x1
adaptation plus a learned modality embedding, then a shared stride-2 encoder
that flattens each map into (H/8)(W/8) tokens. Learnable latent tokens read
the concatenated sequence with cross-attention, a linear layer and a
self-attention pass produce z_struct, and a FiLM adapter turns z_struct into
per-channel (gamma, beta) for the shallow UNet stages.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np

from ..constants import DEPTH, DOG, DOG_PADDINGS, DOG_SIGMAS, FILM_HIDDEN, HEADS, LATENT_TOKENS, MAX_LABEL, MODALITIES, SEG, STRUCT_DIM
from ..exceptions import ParameterError, ShapeError, UnknownKindError
from ..messages import MSG_DOG_PADDING, MSG_EMPTY_TOKENS, MSG_SHAPE_MISMATCH, MSG_SIGMA_ORDER, MSG_UNKNOWN_MODALITY
from ..tensor import ops
from ..tensor.core import Tensor, as_tensor, no_grad
from ..tensor.nn import MLP, Conv2d, Linear, Module, ModuleList, Parameter
from ..util import setup_logger
from .attention import CrossAttention, SelfAttention

logger = setup_logger(__name__)


class Modality(Enum):
    DEPTH = DEPTH
    SEG = SEG
    DOG = DOG


def resolve_modality(modality: Union[str, Modality]) -> Modality:
    if isinstance(modality, Modality):
        return modality
    try:
        return Modality(modality)
    except ValueError:
        raise UnknownKindError(MSG_UNKNOWN_MODALITY.format(modality, MODALITIES))


# ####################################################################
# Difference of Gaussians

def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def dog_kernel(sigma1: float, sigma2: float) -> np.ndarray:
    """Difference of two normalized 2-D Gaussians on the support of the wider one"""
    if not 0 < sigma1 < sigma2:
        raise ParameterError(MSG_SIGMA_ORDER.format(sigma1, sigma2))
    radius = int(math.ceil(3.0 * sigma2))
    g1 = gaussian_kernel1d(sigma1, radius)
    g2 = gaussian_kernel1d(sigma2, radius)
    return np.outer(g1, g1) - np.outer(g2, g2)


def grayscale(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (H, W); channel mean"""
    x = np.asarray(x, dtype=np.float64)
    return x if x.ndim == 2 else x.mean(axis=0)


def compute_dog(x: np.ndarray, sigma1: float = DOG_SIGMAS[0], sigma2: float = DOG_SIGMAS[1],
                padding: str = "reflect") -> np.ndarray:
    """
    Gaussian(sigma1) * x - Gaussian(sigma2) * x

    The kernel sums to zero, so a constant image maps to zero under either
    padding. With ``padding="wrap"`` the output mean is zero for any input;
    under reflect padding the response vanishes wherever the image is affine
    over the kernel support, but the mean of the whole map is not pinned.

    :param x: grayscale image, (H, W) or (1, H, W); the output has the same shape
    :param padding: ``reflect`` or ``wrap``
    """
    if padding not in DOG_PADDINGS:
        raise ParameterError(MSG_DOG_PADDING.format(padding, DOG_PADDINGS))
    x = np.asarray(x, dtype=np.float64)
    image = x.reshape(x.shape[-2:])
    kernel = dog_kernel(sigma1, sigma2)
    r = kernel.shape[0] // 2
    padded = np.pad(image, r, mode=padding)
    with no_grad():
        out = ops.conv2d(padded[None, None], kernel[None, None]).data
    return out.reshape(x.shape)


# ####################################################################
# Cues

@dataclass
class StructuralCues:
    """Depth, segmentation and DoG maps, each (1, H, W) or batched (B, 1, H, W)"""
    depth: np.ndarray
    seg: np.ndarray
    dog: np.ndarray

    def __post_init__(self) -> None:
        if not (self.depth.shape == self.seg.shape == self.dog.shape):
            raise ShapeError(MSG_SHAPE_MISMATCH.format("cues", self.depth.shape, (self.seg.shape, self.dog.shape)))

    def get(self, modality: Union[str, Modality]) -> np.ndarray:
        return getattr(self, resolve_modality(modality).value)

    @classmethod
    def stack(cls, cues: Sequence["StructuralCues"]) -> "StructuralCues":
        return cls(*(np.stack([getattr(c, m) for c in cues]) for m in MODALITIES))


def seg_onehot(seg: np.ndarray) -> np.ndarray:
    """(B, 1, H, W) normalized labels -> (B, MAX_LABEL + 1, H, W) one-hot"""
    labels = np.rint(seg[:, 0] * MAX_LABEL).astype(int)
    return np.moveaxis(np.eye(MAX_LABEL + 1)[labels], -1, 1)


# ####################################################################
# Encoder and aggregator

class StructuralEncoder(Module):
    """phi_m (1x1 conv per modality) + e_m, then a shared three-stage stride-2 encoder"""

    STAGES = 3

    def __init__(self, dim: int, rng: np.random.Generator, onehot_seg: bool = False):
        self.dim = dim
        self.onehot_seg = onehot_seg
        self.adapters = ModuleList([
            Conv2d(MAX_LABEL + 1 if (m == SEG and onehot_seg) else 1, dim, 1, rng) for m in MODALITIES
        ])
        embeddings = rng.standard_normal((len(MODALITIES), dim))
        while len(np.unique(np.round(embeddings, 12), axis=0)) < len(MODALITIES):
            embeddings = rng.standard_normal((len(MODALITIES), dim))
        self.embeddings = Parameter(embeddings)
        self.shared = ModuleList([Conv2d(dim, dim, 3, rng, stride=2, padding=1) for _ in range(self.STAGES)])

    def tokens_per_modality(self, height: int, width: int) -> int:
        for _ in range(self.STAGES):
            height, width = (height + 1) // 2, (width + 1) // 2
        return height * width

    def forward(self, cue: np.ndarray, modality: Union[str, Modality]) -> Tensor:
        m = resolve_modality(modality)
        index = MODALITIES.index(m.value)
        cue = np.asarray(cue, dtype=np.float64)
        if cue.ndim == 3:
            cue = cue[None]
        if m.value == SEG and self.onehot_seg:
            cue = seg_onehot(cue)
        e = ops.reshape(self.embeddings[index], (1, self.dim, 1, 1))
        h = self.adapters[index](Tensor(cue)) + e
        for conv in self.shared:
            h = ops.silu(conv(h))
        B, D, Hh, Ww = h.shape
        return ops.transpose(ops.reshape(h, (B, D, Hh * Ww)), (0, 2, 1))


def encode_modality(cue: np.ndarray, modality: Union[str, Modality], encoder: StructuralEncoder) -> Tensor:
    return encoder(cue, modality)


class TokenAggregator(Module):
    """Latent tokens L; z_struct = SA(Linear(CA(Q=L, K=T_M, V=T_M)))"""

    def __init__(self, dim: int, rng: np.random.Generator, latents: int = LATENT_TOKENS, heads: int = HEADS):
        self.latents = Parameter(rng.standard_normal((latents, dim)) * 0.02)
        self.cross = CrossAttention(dim, dim, dim, rng, heads=heads, value_dim=dim)
        self.proj = Linear(dim, dim, rng)
        self.refine = SelfAttention(dim, dim, rng, heads=heads)

    def forward(self, tokens: Tensor) -> Tensor:
        tokens = as_tensor(tokens)
        if tokens.ndim == 2:
            tokens = ops.reshape(tokens, (1,) + tokens.shape)
        if tokens.shape[1] == 0:
            raise ShapeError(MSG_EMPTY_TOKENS)
        B = tokens.shape[0]
        N, D = self.latents.shape
        latents = ops.broadcast_to(self.latents, (B, N, D))
        return self.refine(self.proj(self.cross(latents, tokens)))


def sta_aggregate(aggregator: TokenAggregator, tokens: Tensor) -> Tensor:
    return aggregator(tokens)


class StructuralPrior(Module):
    def __init__(self, rng: np.random.Generator, dim: int = STRUCT_DIM, latents: int = LATENT_TOKENS,
                 heads: int = HEADS, onehot_seg: bool = False):
        self.encoder = StructuralEncoder(dim, rng, onehot_seg=onehot_seg)
        self.aggregator = TokenAggregator(dim, rng, latents=latents, heads=heads)

    def tokens(self, cues: StructuralCues) -> Tensor:
        return ops.concat([encode_modality(cues.get(m), m, self.encoder) for m in MODALITIES], axis=1)

    def forward(self, cues: StructuralCues) -> Tensor:
        tokens = self.tokens(cues)
        if self.aggregator.latents.shape[0] >= tokens.shape[1]:
            logger.debug("latent count %s does not compress %s structural tokens",
                         self.aggregator.latents.shape[0], tokens.shape[1])
        return sta_aggregate(self.aggregator, tokens)


def extract_structural(prior: StructuralPrior, cues: StructuralCues) -> Tensor:
    return prior(cues)


# ####################################################################
# FiLM

def film_modulate(features: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """F * (1 + gamma) + beta, with gamma and beta broadcast over H x W"""
    return features * (1.0 + as_tensor(gamma)) + beta


class StructuralAdapter(Module):
    """Mean-pool z_struct over tokens, predict [gamma, beta] with a zero-initialized MLP"""

    def __init__(self, channels: int, dim: int, rng: np.random.Generator, hidden: int = FILM_HIDDEN):
        self.channels = channels
        self.mlp = MLP(dim, hidden, 2 * channels, rng, zero_init=True)

    def modulation(self, z_struct: Tensor) -> Tuple[Tensor, Tensor]:
        pooled = ops.mean(z_struct, axis=1)
        gamma, beta = ops.split(self.mlp(pooled), 2, axis=-1)
        return gamma, beta

    def forward(self, features: Tensor, z_struct: Tensor) -> Tensor:
        B, C, _, _ = features.shape
        if C != self.channels:
            raise ShapeError(MSG_SHAPE_MISMATCH.format("structural_film", features.shape, self.channels))
        gamma, beta = self.modulation(z_struct)
        return film_modulate(features, ops.reshape(gamma, (B, C, 1, 1)), ops.reshape(beta, (B, C, 1, 1)))


def structural_film(features: Tensor, z_struct: Tensor, adapter: StructuralAdapter) -> Tensor:
    return adapter(features, z_struct)


