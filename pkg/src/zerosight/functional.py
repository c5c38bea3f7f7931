"""Differentiable neural-network primitives built on :mod:`zerosight.tensor`."""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigurationError, ShapeError
from .tensor import Tensor, _acc_dtype, _reduce_sum, apply

__all__ = [
    "conv2d", "batch_norm", "relu", "leaky_relu", "sigmoid",
    "max_pool2d", "avg_pool2d", "global_avg_pool", "channel_max", "channel_mean",
    "linear", "log_softmax", "logsumexp", "l2_normalize",
]


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def _out_extent(size, k, stride, pad, what):
    span = size + 2 * pad - k
    if span < 0:
        raise ConfigurationError(
            f"{what}: window {k} larger than padded input extent {size + 2 * pad}")
    return span // stride + 1


def _windows(xp: np.ndarray, kh, kw, stride, ho, wo) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, kh, kw) over a padded NCHW array."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def _fold(dwin: np.ndarray, padded_shape, stride, pad) -> np.ndarray:
    """Scatter-add window gradients (N, C, Ho, Wo, kh, kw) back to the input grid."""
    n, c, ho, wo, kh, kw = dwin.shape
    dxp = np.zeros(padded_shape, dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dwin[:, :, :, :, i, j]
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIHW kernel.

    Output extents follow the floor rule ``(H + 2*padding - kH) // stride + 1``.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got shape {x.shape}", dim="rank")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d kernel must be OIHW, got shape {weight.shape}", dim="rank")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv2d: invalid stride={stride} / padding={padding}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {ci}", dim="channels")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)", dim="out_channels")
    ho = _out_extent(h, kh, stride, padding, "conv2d height")
    wo = _out_extent(w, kw, stride, padding, "conv2d width")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _windows(xp, kh, kw, stride, ho, wo).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    padded_shape = xp.shape

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = _reduce_sum(g2, axis=0)
        if x.requires_grad:
            dwin = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gx = _fold(dwin, padded_shape, stride, padding)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return apply("conv2d", out, parents, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Optional[np.ndarray] = None,
               running_var: Optional[np.ndarray] = None, training: bool = True,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over (N,) or (N, H, W) for inputs shaped (N, C[, H, W]).

    In training mode the running buffers, when given, are updated in place
    with an exponential moving average (unbiased batch variance).  Inference
    mode requires both running buffers.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm expects (N,C) or (N,C,H,W), got {x.shape}", dim="rank")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels but gamma/beta shapes {gamma.shape}/{beta.shape}",
                         dim="channels")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    a = x.data
    dt = a.dtype

    if training:
        m = a.size // c
        mean = np.mean(a, axis=axes, dtype=np.float64)
        var = np.mean((a - mean.reshape(bshape)) ** 2, axis=axes, dtype=np.float64)
        if running_mean is not None:
            unbiased = var * m / max(m - 1, 1)
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * unbiased
        mean, var = mean.astype(dt), var.astype(dt)
    else:
        if running_mean is None or running_var is None:
            raise ConfigurationError("batch_norm in inference mode needs recorded running statistics")
        mean, var = running_mean.astype(dt), running_var.astype(dt)

    invstd = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (a - mean.reshape(bshape)) * invstd.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = _reduce_sum(g * xhat, axis=axes)
        gbeta = _reduce_sum(g, axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            m = a.size // c
            s1 = _reduce_sum(dxhat, axis=axes).reshape(bshape)
            s2 = _reduce_sum(dxhat * xhat, axis=axes).reshape(bshape)
            gx = (invstd.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
        else:
            gx = dxhat * invstd.reshape(bshape)
        return gx, ggamma, gbeta

    return apply("batch_norm", out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply("relu", np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return apply("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    a = x.data
    with np.errstate(under="ignore"):
        z = np.exp(-np.abs(a))
    out = np.where(a >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return apply("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def _pool_windows(x: Tensor, kernel, stride, padding, fill, what):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects NCHW input, got {x.shape}", dim="rank")
    kh, kw = _pair(kernel)
    stride = stride or kh
    n, c, h, w = x.shape
    ho = _out_extent(h, kh, stride, padding, f"{what} height")
    wo = _out_extent(w, kw, stride, padding, f"{what} width")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=fill)
    win = _windows(xp, kh, kw, stride, ho, wo).reshape(n, c, ho, wo, kh * kw)
    return win, xp.shape, (kh, kw), stride


def max_pool2d(x: Tensor, kernel, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    win, padded_shape, (kh, kw), stride = _pool_windows(x, kernel, stride, padding, -np.inf, "max_pool2d")
    idx = np.argmax(win, axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(dwin, idx, g[..., None], axis=-1)
        return (_fold(dwin.reshape(*win.shape[:4], kh, kw), padded_shape, stride, padding),)

    return apply("max_pool2d", out, (x,), backward)


def avg_pool2d(x: Tensor, kernel, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Average pooling; zero padding counts toward the window size."""
    win, padded_shape, (kh, kw), stride = _pool_windows(x, kernel, stride, padding, 0.0, "avg_pool2d")
    k = kh * kw
    out = (np.sum(win, axis=-1, dtype=_acc_dtype(x.dtype)) / k).astype(x.dtype)

    def backward(g):
        dwin = np.broadcast_to((g / k)[..., None, None], (*win.shape[:4], kh, kw))
        return (_fold(dwin, padded_shape, stride, padding),)

    return apply("avg_pool2d", out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W, keeping them as unit axes."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}", dim="rank")
    return x.mean(axis=(2, 3), keepdims=True)


def channel_max(x: Tensor) -> Tensor:
    return x.max(axis=1, keepdims=True)


def channel_mean(x: Tensor) -> Tensor:
    return x.mean(axis=1, keepdims=True)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T (+ bias)`` with ``weight`` shaped (out, in)."""
    out = x @ weight.T
    return out + bias if bias is not None else out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - np.max(a, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, dtype=_acc_dtype(x.dtype), keepdims=True)).astype(x.dtype)
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * _reduce_sum(g, axis=axis, keepdims=True),)

    return apply("log_softmax", out, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Stable ``log(sum(exp(x)))``; ``-inf`` entries contribute nothing."""
    a = x.data
    mx = np.max(a, axis=axis, keepdims=True)
    s = np.sum(np.exp(a - mx), axis=axis, dtype=_acc_dtype(x.dtype), keepdims=True)
    out_k = (np.log(s) + mx).astype(x.dtype)

    def backward(g):
        return (np.expand_dims(g, axis) * np.exp(a - out_k),)

    return apply("logsumexp", np.squeeze(out_k, axis), (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    a = x.data
    norm = np.sqrt(np.sum(a * a, axis=axis, dtype=_acc_dtype(x.dtype), keepdims=True)).astype(x.dtype)
    denom = np.maximum(norm, eps)
    out = a / denom

    def backward(g):
        clipped = norm <= eps
        proj = g - out * _reduce_sum(g * out, axis=axis, keepdims=True)
        return (np.where(clipped, g, proj) / denom,)

    return apply("l2_normalize", out, (x,), backward)
