"""
Degradation prior: a conv encoder trained with a label-smoothed classifier
head, whose pooled features modulate the diffusion time embedding.
"""
import math
from typing import Optional, Sequence, Union

import numpy as np

from ..constants import DEG_DIM, LABEL_SMOOTHING, N_CLASSES, PROMPT_SLOTS, TIME_DIM
from ..exceptions import LabelError, ParameterError, ScheduleError, ShapeError
from ..messages import MSG_LABEL_RANGE, MSG_SHAPE_MISMATCH, MSG_SMOOTHING, MSG_T_RANGE
from ..tensor import ops
from ..tensor.core import Tensor, as_tensor, no_grad
from ..tensor.nn import MLP, Conv2d, Linear, Module, Parameter
from .semantic import ImageLike, as_batch


class DegradationEncoder(Module):
    """
    Conv trunk with global pooling to F_g in R^dim, plus a classifier head
    over the degradation classes. Only ``forward``/``features`` are used at
    inference; ``logits`` is the training path.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dim: int = DEG_DIM, classes: int = N_CLASSES):
        self.stem = Conv2d(channels, 16, 3, rng, padding=1)
        self.down1 = Conv2d(16, 32, 3, rng, stride=2, padding=1)
        self.down2 = Conv2d(32, dim, 3, rng, stride=2, padding=1)
        self.proj = Linear(dim, dim, rng)
        self.head = Linear(dim, classes, rng)

    def features(self, x: ImageLike) -> Tensor:
        h = ops.silu(self.stem(as_batch(x)))
        h = ops.silu(self.down1(h))
        h = ops.silu(self.down2(h))
        return self.proj(h.mean(axis=(2, 3)))

    def forward(self, x: ImageLike) -> Tensor:
        return self.features(x)

    def logits(self, x: ImageLike) -> Tensor:
        return self.head(self.features(x))

    def encoder_parameters(self):
        return [p for name, p in self.named_parameters() if not name.startswith("head.")]


def deg_class_loss(logits: Tensor, labels: Sequence[int], eps: float = LABEL_SMOOTHING) -> Tensor:
    """Mean over the batch of -sum_c q_c log softmax(logits)_c, q = (1 - eps) onehot + eps / N"""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    B, N = logits.shape
    if labels.shape[0] != B:
        raise ShapeError(MSG_SHAPE_MISMATCH.format("deg_class_loss", logits.shape, labels.shape))
    bad = np.flatnonzero((labels < 0) | (labels >= N))
    if bad.size:
        raise LabelError(MSG_LABEL_RANGE.format(labels[bad[0]], int(bad[0]), N))
    if not 0.0 <= eps < 1.0:
        raise ParameterError(MSG_SMOOTHING.format(eps))
    q = (1.0 - eps) * np.eye(N)[labels] + eps / N
    return ops.mean(-ops.sum(ops.mul(q, ops.log_softmax(logits, axis=1)), axis=1))


def extract_degradation(encoder: DegradationEncoder, x_lq: ImageLike) -> Tensor:
    return encoder.features(x_lq)


def classification_accuracy(encoder: DegradationEncoder, x: np.ndarray, labels: Sequence[int]) -> float:
    with no_grad():
        predicted = np.argmax(encoder.logits(x).data, axis=1)
    return float(np.mean(predicted == np.asarray(labels)))


# ####################################################################
# Time modulation

def sinusoidal_embedding(tau: Union[int, Sequence[int], np.ndarray], dim: int = TIME_DIM) -> np.ndarray:
    """(B,) timesteps -> (B, dim) sin/cos features"""
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class TimeModulator(Module):
    """
    t' = t + phi(softmax(W_d z_deg) . P) where P is a bank of ``slots`` prompt
    rows and the softmax weights mix them. phi's output layer starts at zero.
    """

    def __init__(self, rng: np.random.Generator, time_dim: int = TIME_DIM, deg_dim: int = DEG_DIM,
                 slots: int = PROMPT_SLOTS):
        self.select = Linear(deg_dim, slots, rng)
        self.prompts = Parameter(rng.standard_normal((slots, time_dim)))
        self.phi = MLP(time_dim, time_dim, time_dim, rng, zero_init=True)

    def weights(self, z_deg: Tensor) -> Tensor:
        return ops.softmax(self.select(z_deg), axis=-1)

    def mixture(self, z_deg: Tensor) -> Tensor:
        return ops.matmul(self.weights(z_deg), self.prompts)

    def forward(self, t_emb: Tensor, z_deg: Tensor) -> Tensor:
        return t_emb + self.phi(self.mixture(z_deg))


def check_timesteps(tau: Union[int, Sequence[int], np.ndarray], T: Optional[int] = None) -> np.ndarray:
    """Reject timesteps outside [0, T]; only the lower bound applies when T is None"""
    tau = np.atleast_1d(np.asarray(tau))
    hi = np.inf if T is None else T
    if tau.size and (tau.min() < 0 or tau.max() > hi):
        raise ScheduleError(MSG_T_RANGE.format(tau.tolist(), 0, hi))
    return tau


def modulate_time(tau: Union[int, Sequence[int], np.ndarray], z_deg: Tensor, modulator: TimeModulator,
                  T: Optional[int] = None) -> Tensor:
    """
    Degradation-modulated time embedding for timesteps ``tau``

    :param T: schedule length; timesteps must lie in [0, T]
    """
    t_emb = Tensor(sinusoidal_embedding(check_timesteps(tau, T), modulator.prompts.shape[1]))
    z_deg = as_tensor(z_deg)
    if z_deg.ndim == 1:
        z_deg = ops.reshape(z_deg, (1,) + z_deg.shape)
    return modulator(t_emb, z_deg)
