#!/usr/bin/env python
"""
Differentiable operations on `Tensor`.

Every op is a `Function` subclass recorded on the tape plus a thin functional
wrapper that validates shapes. Convolutions use im2col over
`sliding_window_view`; the backward pass scatters column gradients back with
strided slice adds.
"""
from __future__ import annotations

# std-lib imports
from typing import List, Optional, Sequence, Tuple, Union

# 3 party imports
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# project imports
from simic.core.tensor import Function, ShapeError, Tensor, is_grad_enabled


Axis = Optional[Union[int, Tuple[int, ...]]]


###############################################################################
# elementwise / shape ops
###############################################################################

class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad: np.ndarray):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad: np.ndarray):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x, self.y = x, y
        return x * y

    def backward(self, grad: np.ndarray):
        return (
            self.unbroadcast(grad * self.y, self.x.shape),
            self.unbroadcast(grad * self.x, self.y.shape),
        )


class MatMul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x, self.y = x, y
        return np.matmul(x, y)

    def backward(self, grad: np.ndarray):
        x, y = self.x, self.y
        if x.ndim == 1 and y.ndim == 1:
            return grad * y, grad * x
        x2 = x[None, :] if x.ndim == 1 else x
        y2 = y[:, None] if y.ndim == 1 else y
        g2 = grad
        if x.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if y.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        gx = np.matmul(g2, np.swapaxes(y2, -1, -2))
        gy = np.matmul(np.swapaxes(x2, -1, -2), g2)
        if x.ndim == 1:
            gx = np.squeeze(gx, -2)
        if y.ndim == 1:
            gy = np.squeeze(gy, -1)
        return self.unbroadcast(gx, x.shape), self.unbroadcast(gy, y.shape)


class Sum(Function):
    def forward(self, x: np.ndarray, axis: Axis = None, keepdims: bool = False) -> np.ndarray:
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray):
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            axes = tuple(a % len(self.shape) for a in axes)
            for a in sorted(axes):
                grad = np.expand_dims(grad, a)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...] = ()) -> np.ndarray:
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad: np.ndarray):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x: np.ndarray, axes: Optional[Tuple[int, ...]] = None) -> np.ndarray:
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad: np.ndarray):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 0) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad: np.ndarray):
        return (grad * self.mask,)


class Tanh(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * (1.0 - self.out ** 2),)


class Softmax(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = x - np.max(x, axis=-1, keepdims=True)
        exp = np.exp(shifted)
        self.out = exp / np.sum(exp, axis=-1, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray):
        y = self.out
        return (y * (grad - np.sum(grad * y, axis=-1, keepdims=True)),)


def add(x: Tensor, y: Tensor) -> Tensor:
    _check_broadcast(x, y, "add")
    return Add.apply(x, y)


def sub(x: Tensor, y: Tensor) -> Tensor:
    _check_broadcast(x, y, "sub")
    return Sub.apply(x, y)


def mul(x: Tensor, y: Tensor) -> Tensor:
    _check_broadcast(x, y, "mul")
    return Mul.apply(x, y)


def matmul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape[-1] != y.shape[0 if y.ndim == 1 else -2]:
        raise ShapeError(f"matmul: inner dimensions differ, {x.shape} @ {y.shape}")
    return MatMul.apply(x, y)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if -1 not in shape and int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return Reshape.apply(x, shape=shape)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is not None and sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {tuple(axes)} are not a permutation of {x.ndim} dims")
    return Transpose.apply(x, axes=tuple(axes) if axes is not None else None)


def flatten(x: Tensor) -> Tensor:
    """Flattens all but the batch axis."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors: List[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ outside axis {axis}")
    return Concat.apply(*tensors, axis=axis)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def softmax(scores: Tensor) -> Tensor:
    """
    Softmax over the last axis with max subtraction.

    Raises:
        ValueError: If `scores` contains NaN.
    """
    if np.isnan(scores.data).any():
        raise ValueError("softmax: input contains NaN")
    return Softmax.apply(scores)


def global_avg_pool(x: Tensor) -> Tensor:
    """Averages each channel of an NCHW tensor to give an (N, C) tensor."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    return mean(x, axis=(2, 3))


def _check_broadcast(x: Tensor, y: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {x.shape} and {y.shape} do not broadcast") from None


###############################################################################
# dense layers
###############################################################################

class Linear(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
        self.x_shape = x.shape
        self.x2 = x.reshape(-1, x.shape[-1])
        self.w = w
        out = self.x2 @ w.T
        if b is not None:
            out = out + b
        return out.reshape(x.shape[:-1] + (w.shape[0],))

    def backward(self, grad: np.ndarray):
        g2 = grad.reshape(-1, grad.shape[-1])
        gx = (g2 @ self.w).reshape(self.x_shape)
        gw = g2.T @ self.x2
        if len(self.parents) == 3:
            return gx, gw, g2.sum(axis=0)
        return gx, gw


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Computes `x @ weight.T + bias` over the last axis of `x`.

    Args:
        x (Tensor): Input of shape (..., din).
        weight (Tensor): Weight of shape (dout, din).
        bias (Tensor, optional): Bias of shape (dout,). Defaults to `None`.

    Raises:
        ShapeError: If `din` differs between input and weight, or the bias length
            is not `dout`.
    """
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is None:
        return Linear.apply(x, weight)
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    return Linear.apply(x, weight, bias)


###############################################################################
# convolutions
###############################################################################

def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> strided view of shape (N, C, Ho, Wo, kh, kw)."""
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _col2im(dwin: np.ndarray, padded_shape: Tuple[int, ...], stride: int) -> np.ndarray:
    """Scatter-adds window gradients (N, C, Ho, Wo, kh, kw) onto the padded input."""
    _, _, ho, wo, kh, kw = dwin.shape
    dx = np.zeros(padded_shape, dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[:, :, :, :, i, j]
    return dx


def _unpad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


class Conv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
        n, c, _, _ = x.shape
        f, _, kh, kw = w.shape
        self.stride, self.padding, self.w = stride, padding, w
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.padded_shape = xp.shape
        win = _windows(xp, kh, kw, stride)
        ho, wo = win.shape[2], win.shape[3]
        # (N*Ho*Wo, C*kh*kw)
        self.cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        out = self.cols @ w.reshape(f, -1).T + b
        return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def backward(self, grad: np.ndarray):
        n, f, ho, wo = grad.shape
        _, c, kh, kw = self.w.shape
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, f)
        gw = (g2.T @ self.cols).reshape(self.w.shape)
        gb = g2.sum(axis=0)
        dcols = (g2 @ self.w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gx = _unpad(_col2im(dcols, self.padded_shape, self.stride), self.padding)
        return gx, gw, gb


class DepthwiseConv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
        _, _, kh, kw = w.shape
        self.stride, self.padding, self.w = stride, padding, w
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.padded_shape = xp.shape
        self.win = _windows(xp, kh, kw, stride)
        return np.einsum("nchwij,cij->nchw", self.win, w[:, 0])

    def backward(self, grad: np.ndarray):
        gw = np.einsum("nchw,nchwij->cij", grad, self.win)[:, None]
        dwin = grad[..., None, None] * self.w[:, 0][None, :, None, None, :, :]
        gx = _unpad(_col2im(dwin, self.padded_shape, self.stride), self.padding)
        return gx, gw


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation of an NCHW input with an FCkhkw kernel.

    Output spatial size is `(H + 2*padding - kh) // stride + 1`.

    Raises:
        ShapeError: On rank, channel, bias or kernel-size mismatches.
        ValueError: If `stride < 1` or `padding < 0`.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and FCkhkw weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {weight.shape[0]} filters")
    _check_conv_geometry(x.shape, weight.shape[2:], stride, padding, "conv2d")
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel spatial filtering; `weight` has shape (C, 1, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d expects NCHW input and (C,1,kh,kw) weight, got {x.shape} and {weight.shape}")
    if weight.shape[0] != x.shape[1]:
        raise ShapeError(f"depthwise_conv2d: {weight.shape[0]} filters for {x.shape[1]} input channels")
    _check_conv_geometry(x.shape, weight.shape[2:], stride, padding, "depthwise_conv2d")
    return DepthwiseConv2d.apply(x, weight, stride=stride, padding=padding)


def depthwise_separable_conv(
    x: Tensor,
    depthwise_weight: Tensor,
    pointwise_weight: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Depthwise conv (one filter per input channel) followed by a 1x1 pointwise conv."""
    if pointwise_weight.ndim != 4 or pointwise_weight.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise weight must be (F, C, 1, 1), got {pointwise_weight.shape}")
    spatial = depthwise_conv2d(x, depthwise_weight, stride=stride, padding=padding)
    return conv2d(spatial, pointwise_weight, bias, stride=1, padding=0)


def _check_conv_geometry(x_shape, k_shape, stride: int, padding: int, name: str) -> None:
    if stride < 1:
        raise ValueError(f"{name}: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"{name}: padding must be >= 0, got {padding}")
    kh, kw = k_shape
    hp, wp = x_shape[2] + 2 * padding, x_shape[3] + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"{name}: kernel {kh}x{kw} exceeds padded input {hp}x{wp}")


###############################################################################
# normalization
###############################################################################

class BatchNormTrain(Function):
    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
        self.count = x.shape[0] * x.shape[2] * x.shape[3]
        self.batch_mean = x.mean(axis=(0, 2, 3))
        self.batch_var = x.var(axis=(0, 2, 3))
        self.inv_std = 1.0 / np.sqrt(self.batch_var + eps)
        self.xhat = (x - self.batch_mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        return gamma[None, :, None, None] * self.xhat + beta[None, :, None, None]

    def backward(self, grad: np.ndarray):
        axes = (0, 2, 3)
        g_gamma = np.sum(grad * self.xhat, axis=axes)
        g_beta = np.sum(grad, axis=axes)
        dxhat = grad * self.gamma[None, :, None, None]
        m = self.count
        gx = (self.inv_std[None, :, None, None] / m) * (
            m * dxhat
            - np.sum(dxhat, axis=axes)[None, :, None, None]
            - self.xhat * np.sum(dxhat * self.xhat, axis=axes)[None, :, None, None]
        )
        return gx, g_gamma, g_beta


class BatchNormEval(Function):
    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                running_mean: np.ndarray = None, running_var: np.ndarray = None, eps: float = 1e-5) -> np.ndarray:
        self.inv_std = 1.0 / np.sqrt(running_var + eps)
        self.xhat = (x - running_mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        return gamma[None, :, None, None] * self.xhat + beta[None, :, None, None]

    def backward(self, grad: np.ndarray):
        axes = (0, 2, 3)
        gx = grad * (self.gamma * self.inv_std)[None, :, None, None]
        return gx, np.sum(grad * self.xhat, axis=axes), np.sum(grad, axis=axes)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """
    Batch normalization over the N, H and W axes of an NCHW tensor.

    In train mode the batch statistics normalize the input and the running
    statistics are updated in place (`running_var` with the unbiased batch
    variance). In eval mode the running statistics are used.

    Raises:
        ValueError: If `training` and the batch has fewer than 2 samples.
        ShapeError: If the input is not NCHW or the parameters do not have C entries.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm: scale/shift must have {channels} entries")
    if not training:
        return BatchNormEval.apply(x, gamma, beta, running_mean=running_mean, running_var=running_var, eps=eps)
    if x.shape[0] < 2:
        raise ValueError(f"batch_norm in train mode needs at least 2 samples, got {x.shape[0]}")
    func = BatchNormTrain(x, gamma, beta)
    data = func.forward(x.data, gamma.data, beta.data, eps=eps)
    requires_grad = is_grad_enabled() and any(t.requires_grad for t in (x, gamma, beta))
    unbiased = func.batch_var * func.count / (func.count - 1)
    running_mean *= (1.0 - momentum)
    running_mean += momentum * func.batch_mean
    running_var *= (1.0 - momentum)
    running_var += momentum * unbiased
    return Tensor(data, requires_grad=requires_grad, node=func if requires_grad else None)


###############################################################################
# loss
###############################################################################

class Huber(Function):
    def forward(self, pred: np.ndarray, target: np.ndarray, delta: float = 1.0, reduction: str = "sum") -> np.ndarray:
        e = pred - target
        abs_e = np.abs(e)
        inside = abs_e <= delta
        losses = np.where(inside, e * e / (2.0 * delta), abs_e - delta / 2.0)
        self.dloss = np.where(inside, e / delta, np.sign(e))
        self.scale = 1.0 / e.size if reduction == "mean" else 1.0
        self.target_shape = target.shape
        return np.asarray(losses.sum() * self.scale)

    def backward(self, grad: np.ndarray):
        g = grad * self.scale * self.dloss
        return g, self.unbroadcast(-g, self.target_shape)


def huber(pred: Tensor, target: Tensor, delta: float = 1.0, reduction: str = "sum") -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"huber: prediction {pred.shape} and target {target.shape} differ")
    return Huber.apply(pred, target, delta=delta, reduction=reduction)
