import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..constants import ADAM_EPS, BETAS, LEARNING_RATE, WEIGHT_DECAY
from .nn import Parameter


def cosine_lr(step: int, total_steps: int, lr: float, lr_min: float = 0.0) -> float:
    """Cosine decay from ``lr`` at step 0 to ``lr_min`` at ``total_steps``"""
    if total_steps <= 0:
        return lr
    progress = min(max(step, 0), total_steps) / total_steps
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class AdamW:
    """Adam with decoupled weight decay"""

    def __init__(self, params: Sequence[Parameter], lr: float = LEARNING_RATE, betas: Tuple[float, float] = BETAS,
                 eps: float = ADAM_EPS, weight_decay: float = WEIGHT_DECAY):
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None or not p.requires_grad:
                continue
            m = self._m.get(i, np.zeros_like(p.data))
            v = self._v.get(i, np.zeros_like(p.data))
            m = b1 * m + (1.0 - b1) * p.grad
            v = b2 * v + (1.0 - b2) * (p.grad * p.grad)
            self._m[i], self._v[i] = m, v
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data = p.data - lr * update
