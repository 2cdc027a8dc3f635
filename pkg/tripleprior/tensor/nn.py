from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import CheckpointError, ShapeError
from ..messages import MSG_SHAPE_MISMATCH
from . import ops
from .core import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor"""

    def __init__(self, data: np.ndarray):
        super().__init__(data, requires_grad=True)


class Module:
    """
    Container of parameters and submodules, discovered in attribute order.

    Attribute order is construction order, so ``named_parameters`` and
    ``state_dict`` are stable across runs.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise CheckpointError(f"state mismatch; missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: stored shape {value.shape} != parameter shape {p.shape}")
            p.data = np.ascontiguousarray(value.copy())


class ModuleList(Module):
    def __init__(self, modules: Sequence[Optional[Module]] = ()):
        self._items: List[Optional[Module]] = list(modules)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Optional[Module]:
        return self._items[i]

    def __iter__(self):
        return iter(self._items)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for i, m in enumerate(self._items):
            if m is not None:
                yield from m.named_parameters(f"{prefix}{i}.")


# ####################################################################
# Initializers

def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ####################################################################
# Layers

class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            self.weight = Parameter(np.zeros((in_features, out_features)))
        else:
            self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def __repr__(self) -> str:
        return f"Linear({self.in_features}, {self.out_features})"

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(MSG_SHAPE_MISMATCH.format("linear", x.shape, (self.in_features, self.out_features)))
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def __repr__(self) -> str:
        O, C, k, _ = self.weight.shape
        return f"Conv2d({C}, {O}, k={k}, stride={self.stride}, padding={self.padding})"

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, eps: float = 1e-5):
        self.groups = int(np.gcd(groups, channels))
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.groups, self.weight, self.bias, self.eps)


class MLP(Module):
    """Two linear layers with SiLU between; ``zero_init`` zeroes the output layer"""

    def __init__(self, in_features: int, hidden: int, out_features: int, rng: np.random.Generator, zero_init: bool = False):
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng, zero_init=zero_init)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.silu(self.fc1(x)))
