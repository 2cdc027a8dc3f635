"""
Primitive differentiable ops and the composites built from them.
"""
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ShapeError
from ..messages import MSG_KERNEL_TOO_LARGE, MSG_SHAPE_MISMATCH
from .core import ArrayLike, Function, Tensor, as_tensor


def _check_broadcast(name: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(MSG_SHAPE_MISMATCH.format(name, a.shape, b.shape))


# ####################################################################
# Elementwise

class Add(Function):
    def forward(self, a, b):
        _check_broadcast("add", a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        _check_broadcast("sub", a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        _check_broadcast("mul", a, b)
        self.saved = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return grad * b, grad * a


class Div(Function):
    def forward(self, a, b):
        _check_broadcast("div", a, b)
        self.saved = (a, b)
        return a / b

    def backward(self, grad):
        a, b = self.saved
        return grad / b, -grad * a / (b * b)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Exp(Function):
    def forward(self, a):
        out = np.exp(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad * out,)


class Log(Function):
    def forward(self, a):
        self.saved = (a,)
        return np.log(a)

    def backward(self, grad):
        (a,) = self.saved
        return (grad / a,)


class Sqrt(Function):
    def forward(self, a):
        out = np.sqrt(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad / (2.0 * out),)


class Abs(Function):
    def forward(self, a):
        self.saved = (np.sign(a),)
        return np.abs(a)

    def backward(self, grad):
        (sign,) = self.saved
        return (grad * sign,)


class SiLU(Function):
    def forward(self, a):
        sig = 1.0 / (1.0 + np.exp(-np.clip(a, -500.0, 500.0)))
        self.saved = (a, sig)
        return a * sig

    def backward(self, grad):
        a, sig = self.saved
        return (grad * sig * (1.0 + a * (1.0 - sig)),)


# ####################################################################
# Linear algebra

class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(MSG_SHAPE_MISMATCH.format("matmul", a.shape, b.shape))
        self.saved = (a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        return np.matmul(grad, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), grad)


# ####################################################################
# Reductions and shape

class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.saved = (a.shape, axis, keepdims)
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims))

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            grad = np.expand_dims(grad, tuple(ax % len(shape) for ax in axes))
        return (np.broadcast_to(grad, shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.saved = (a.shape,)
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError(MSG_SHAPE_MISMATCH.format("reshape", a.shape, tuple(shape)))

    def backward(self, grad):
        (shape,) = self.saved
        return (grad.reshape(shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
        self.saved = (np.argsort(axes),)
        return np.transpose(a, axes)

    def backward(self, grad):
        (inverse,) = self.saved
        return (np.transpose(grad, inverse),)


class BroadcastTo(Function):
    def forward(self, a, shape=()):
        self.saved = (a.shape,)
        try:
            return np.broadcast_to(a, tuple(shape)).copy()
        except ValueError:
            raise ShapeError(MSG_SHAPE_MISMATCH.format("broadcast_to", a.shape, tuple(shape)))

    def backward(self, grad):
        # Tape.backward sums the gradient back down to the input shape
        return (grad,)


class GetItem(Function):
    def forward(self, a, index=None):
        self.saved = (a.shape, index)
        return np.array(a[index])

    def backward(self, grad):
        shape, index = self.saved
        out = np.zeros(shape)
        np.add.at(out, index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.saved = ([a.shape[axis] for a in arrays], axis)
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError:
            raise ShapeError(MSG_SHAPE_MISMATCH.format("concat", arrays[0].shape, [a.shape for a in arrays[1:]]))

    def backward(self, grad):
        extents, axis = self.saved
        return tuple(np.split(grad, np.cumsum(extents)[:-1], axis=axis))


# ####################################################################
# Softmax family

class Softmax(Function):
    def forward(self, a, axis=-1):
        shifted = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=axis, keepdims=True)
        self.saved = (out, axis)
        return out

    def backward(self, grad):
        out, axis = self.saved
        return (out * (grad - np.sum(grad * out, axis=axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, a, axis=-1):
        shifted = a - np.max(a, axis=axis, keepdims=True)
        out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        self.saved = (out, axis)
        return out

    def backward(self, grad):
        out, axis = self.saved
        return (grad - np.exp(out) * np.sum(grad, axis=axis, keepdims=True),)


# ####################################################################
# Convolution
#
# x: B x C x H x W, w: O x C x kh x kw, optional bias O.
# Columns hold every kernel tap as its own axis, (B, C, kh, kw, Ho, Wo), so
# forward is one tensordot and backward scatters taps back tap by tap.

def conv_output_size(extent: int, kernel: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - kernel) // stride + 1


class Conv2d(Function):
    def forward(self, x, w, b=None, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(MSG_SHAPE_MISMATCH.format("conv2d", x.shape, w.shape))
        B, C, H, W = x.shape
        O, _, kh, kw = w.shape
        if kh > H + 2 * padding or kw > W + 2 * padding:
            raise ShapeError(MSG_KERNEL_TOO_LARGE.format((kh, kw), (H + 2 * padding, W + 2 * padding)))
        Ho = conv_output_size(H, kh, stride, padding)
        Wo = conv_output_size(W, kw, stride, padding)

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        cols = np.empty((B, C, kh, kw, Ho, Wo))
        for u in range(kh):
            for v in range(kw):
                cols[:, :, u, v] = xp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride]

        out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))  # B, Ho, Wo, O
        out = out.transpose(0, 3, 1, 2)
        if b is not None:
            out = out + b.reshape(1, O, 1, 1)
        self.saved = (cols, w, xp.shape, stride, padding, b is not None)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        cols, w, padded_shape, stride, padding, has_bias = self.saved
        _, _, kh, kw, Ho, Wo = cols.shape

        gw = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 4, 5]))
        gcols = np.tensordot(grad, w, axes=([1], [0]))  # B, Ho, Wo, C, kh, kw
        gxp = np.zeros(padded_shape)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride] += gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
        H, W = padded_shape[2] - 2 * padding, padded_shape[3] - 2 * padding
        gx = gxp[:, :, padding:padding + H, padding:padding + W]

        if has_bias:
            return gx, gw, grad.sum(axis=(0, 2, 3))
        return gx, gw


# ####################################################################
# Functional API

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(a, b)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Div.apply(a, b)


def neg(a: ArrayLike) -> Tensor:
    return Neg.apply(a)


def exp(a: ArrayLike) -> Tensor:
    return Exp.apply(a)


def log(a: ArrayLike) -> Tensor:
    return Log.apply(a)


def sqrt(a: ArrayLike) -> Tensor:
    return Sqrt.apply(a)


def abs(a: ArrayLike) -> Tensor:
    return Abs.apply(a)


def silu(a: ArrayLike) -> Tensor:
    return SiLU.apply(a)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return MatMul.apply(a, b)


def sum(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(a)
    if axis is None:
        count = t.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([t.shape[ax] for ax in axes]))
    return Sum.apply(t, axis=axis, keepdims=keepdims) / float(count)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def flatten(a: ArrayLike, start: int = 0) -> Tensor:
    t = as_tensor(a)
    return reshape(t, t.shape[:start] + (-1,))


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(a, axes=axes)


def broadcast_to(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    return BroadcastTo.apply(a, shape=tuple(shape))


def getitem(a: ArrayLike, index: Any) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    return Softmax.apply(a, axis=axis)


def log_softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(a, axis=axis)


def conv2d(x: ArrayLike, w: ArrayLike, b: Optional[ArrayLike] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Cross-correlation of ``x`` (C x H x W or B x C x H x W) with ``w`` (O x C x kh x kw)

    Output extent per axis is ``floor((H + 2 * padding - kh) / stride) + 1``.
    """
    x = as_tensor(x)
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    args = (x, w) if b is None else (x, w, b)
    out = Conv2d.apply(*args, stride=stride, padding=padding)
    if single:
        out = reshape(out, out.shape[1:])
    return out


# ####################################################################
# Composites

def linear(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def group_norm(x: Tensor, groups: int, weight: Tensor, bias: Tensor, eps: float) -> Tensor:
    B, C, H, W = x.shape
    if C % groups:
        raise ShapeError(MSG_SHAPE_MISMATCH.format("group_norm", (C,), (groups,)))
    g = reshape(x, (B, groups, (C // groups) * H * W))
    centered = g - mean(g, axis=2, keepdims=True)
    var = mean(centered * centered, axis=2, keepdims=True)
    normed = reshape(centered / sqrt(var + eps), (B, C, H, W))
    return normed * reshape(weight, (1, C, 1, 1)) + reshape(bias, (1, C, 1, 1))


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    wide = broadcast_to(reshape(x, (B, C, H, 1, W, 1)), (B, C, H, factor, W, factor))
    return reshape(wide, (B, C, H * factor, W * factor))


def l1_loss(pred: ArrayLike, target: ArrayLike) -> Tensor:
    return mean(abs(sub(pred, target)))


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    dot = sum(a * b, axis=axis)
    return dot / (sqrt(sum(a * a, axis=axis)) * sqrt(sum(b * b, axis=axis)))


def norms(a: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=axis))


def split(a: Tensor, sections: int, axis: int = -1) -> Tuple[Tensor, ...]:
    extent = a.shape[axis] // sections
    out = []
    for i in range(sections):
        index = [slice(None)] * a.ndim
        index[axis] = slice(i * extent, (i + 1) * extent)
        out.append(getitem(a, tuple(index)))
    return tuple(out)
