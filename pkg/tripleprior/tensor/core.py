"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive is a :class:`Function` with a ``forward`` over numpy arrays
and a ``backward`` that maps the output gradient to one gradient per input.
``Function.apply`` runs the forward pass and, when any input requires a
gradient, records the call on the thread's :class:`Tape`. Records are kept
in creation order, which is a topological order of the graph, so
``Tape.backward`` replays them in reverse and visits every node once.
"""
import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import NonFiniteError, ShapeError
from ..messages import MSG_NON_FINITE, MSG_NOT_SCALAR
from ..util import setup_logger

logger = setup_logger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]
Grads = Tuple[Optional[np.ndarray], ...]


# #####################################
# Tape

class Tape:
    """Ordered record of the primitive ops of the current forward pass"""

    def __init__(self) -> None:
        self._records: List[Tuple["Function", "Tensor"]] = []
        self.op_count = 0

    def __len__(self) -> int:
        return len(self._records)

    def next_index(self) -> int:
        index = self.op_count
        self.op_count += 1
        return index

    def record(self, fn: "Function", out: "Tensor") -> None:
        self._records.append((fn, out))

    def clear(self) -> None:
        self._records = []
        self.op_count = 0

    def backward(self, root: "Tensor", grad: np.ndarray) -> None:
        if root.creator is None:
            root._accumulate(grad)
            self.clear()
            return

        pending: Dict[int, np.ndarray] = {id(root): grad}
        for fn, out in reversed(self._records):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for inp, ig in zip(fn.inputs, fn.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    ig = unbroadcast(ig, inp.shape)
                if inp.creator is None:
                    inp._accumulate(ig)
                else:
                    key = id(inp)
                    pending[key] = pending[key] + ig if key in pending else ig
        self.clear()


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def reset_tape() -> None:
    current_tape().clear()


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


# #####################################
# Tensor

def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, creator: Optional["Function"] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(MSG_NOT_SCALAR.format(self.shape))
            grad = np.ones_like(self.data)
        current_tape().backward(self, np.asarray(grad, dtype=np.float64))

    # operators delegate to ops; imported lazily to keep ops free to import core

    def __add__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        from . import ops
        return ops.reshape(self, shape)

    def transpose(self, axes: Optional[Sequence[int]] = None) -> "Tensor":
        from . import ops
        return ops.transpose(self, axes)

    def flatten(self, start: int = 0) -> "Tensor":
        from . import ops
        return ops.flatten(self, start)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# #####################################
# Function

class Function:
    """
    One primitive op. Subclasses implement ``forward`` on arrays and
    ``backward`` returning one gradient (or None) per input.
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.saved: Tuple[Any, ...] = ()

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Grads:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> Tensor:
        tensors = tuple(as_tensor(i) for i in inputs)
        fn = cls(*tensors)
        # non-finite results are reported below with the op index
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = fn.forward(*(t.data for t in tensors), **kwargs)

        tape = current_tape()
        index = tape.next_index()
        if not np.isfinite(out).all():
            raise NonFiniteError(MSG_NON_FINITE.format(index, cls.__name__), index, cls.__name__)

        requires_grad = grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=requires_grad, creator=fn if requires_grad else None)
        if requires_grad:
            tape.record(fn, result)
        else:
            fn.saved = ()
        return result
