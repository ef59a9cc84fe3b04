"""Neural-network primitives with hand-written backward rules.

Feature maps use the (batch, channels, height, width) layout throughout.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from scaleformer.autodiff import profiler
from scaleformer.autodiff.tensor import Tensor, as_tensor, concat, matmul, reshape, split
from scaleformer.errors import ConfigError, ShapeError

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(np.maximum(x.data, 0), (x,), lambda g: (g * mask,), "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT1_2))
    out = (xd * cdf).astype(x.dtype)

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return ((g * (cdf + xd * pdf)).astype(x.dtype),)

    return Tensor._result(out, (x,), backward, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), backward, "log_softmax")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Channel-last affine map: ``x[..., in] @ weight[in, out] + bias``."""
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), weight)
    if bias is not None:
        y = y + bias
    return reshape(y, lead + (weight.shape[-1],))


# normalization -----------------------------------------------------------


def _param_shape(ndim: int, axis: int, n: int) -> tuple[int, ...]:
    shape = [1] * ndim
    shape[axis] = n
    return tuple(shape)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize over the single ``axis`` (the channel axis) per position."""
    axis = axis % x.ndim
    n = x.shape[axis]
    pshape = _param_shape(x.ndim, axis, n)
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    w = weight.data.reshape(pshape)
    out = xhat * w + bias.data.reshape(pshape)
    others = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        dxhat = g * w
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=axis, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True)
        )
        dw = (g * xhat).sum(axis=others)
        db = g.sum(axis=others)
        return dx, dw, db

    return Tensor._result(out, (x, weight, bias), backward, "layer_norm")


def batch_norm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch norm over (batch, height, width) per channel.

    In training mode the running buffers are updated in place with the
    unbiased batch variance, the same convention as the common frameworks.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects (B, C, H, W), got {x.shape}")
    axes = (0, 2, 3)
    pshape = (1, x.shape[1], 1, 1)
    w = weight.data.reshape(pshape)
    b = bias.data.reshape(pshape)
    xd = x.data
    if not training:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(pshape)
        scale = w * inv_std
        xhat = (xd - running_mean.reshape(pshape).astype(x.dtype)) * inv_std
        out = xhat * w + b

        def backward_eval(g):
            return g * scale, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return Tensor._result(out, (x, weight, bias), backward_eval, "batch_norm")

    count = xd.shape[0] * xd.shape[2] * xd.shape[3]
    mu = xd.mean(axis=axes, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * w + b

    unbiased = var.reshape(-1) * (count / max(count - 1, 1))
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu.reshape(-1)
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased

    def backward(g):
        dxhat = g * w
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor._result(out, (x, weight, bias), backward, "batch_norm")


# convolution ---------------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    padding=0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation.

    ``weight`` has shape (out_channels, in_channels // groups, kh, kw). Dense
    (groups=1) and depth-wise (groups == in == out channels) kernels have
    dedicated paths; other group counts loop over dense sub-convolutions.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = weight.shape
    if groups < 1 or C % groups or O % groups:
        raise ConfigError(f"channels ({C} in, {O} out) not divisible by groups={groups}")
    if Cg != C // groups:
        raise ShapeError(f"weight expects {Cg} channels per group, input gives {C // groups}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    Ho, Wo = conv_output_size(H, kh, sh, ph), conv_output_size(W, kw, sw, pw)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {H}x{W}, kernel {kh}x{kw}")
    profiler.record(B * O * Ho * Wo * Cg * kh * kw)
    if groups == 1:
        out = _conv_dense(x, weight, (sh, sw), (ph, pw), Ho, Wo)
    elif groups == C == O:
        out = _conv_depthwise(x, weight, (sh, sw), (ph, pw), Ho, Wo)
    else:
        xs = _split_channels(x, groups)
        ws = _split_channels(weight, groups, axis=0)
        out = concat(
            [_conv_dense(xi, wi, (sh, sw), (ph, pw), Ho, Wo) for xi, wi in zip(xs, ws)], axis=1
        )
    if bias is not None:
        out = out + reshape(bias, (1, O, 1, 1))
    return out


def _split_channels(t: Tensor, groups: int, axis: int = 1) -> list[Tensor]:
    n = t.shape[axis] // groups
    return split(t, [n] * groups, axis=axis)


def _pad(xd: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return xd
    return np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _conv_dense(x: Tensor, weight: Tensor, stride, padding, Ho: int, Wo: int) -> Tensor:
    sh, sw = stride
    ph, pw = padding
    B, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    wd = weight.data
    w2 = wd.reshape(O, -1)
    if kh == kw == 1 and sh == sw == 1 and ph == pw == 0:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, C)
    else:
        xp = _pad(x.data, ph, pw)
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, C * kh * kw)
    out = (cols @ w2.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g2.T @ cols).reshape(wd.shape)
        gcols = g2 @ w2
        if kh == kw == 1 and sh == sw == 1 and ph == pw == 0:
            gx = gcols.reshape(B, H, W, C).transpose(0, 3, 1, 2)
            return gx, gw
        gcols = gcols.reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw] += gcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        return gxp[:, :, ph : ph + H, pw : pw + W], gw

    return Tensor._result(np.ascontiguousarray(out), (x, weight), backward, "conv2d")


def _conv_depthwise(x: Tensor, weight: Tensor, stride, padding, Ho: int, Wo: int) -> Tensor:
    sh, sw = stride
    ph, pw = padding
    B, C, H, W = x.shape
    _, _, kh, kw = weight.shape
    wd = weight.data
    xp = _pad(x.data, ph, pw)
    out = np.zeros((B, C, Ho, Wo), dtype=np.result_type(x.dtype, weight.dtype))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw] * wd[:, 0, i, j].reshape(1, C, 1, 1)

    def backward(g):
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                win = xp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw]
                gw[:, 0, i, j] = (g * win).sum(axis=(0, 2, 3))
                gxp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw] += g * wd[:, 0, i, j].reshape(1, C, 1, 1)
        return gxp[:, :, ph : ph + H, pw : pw + W], gw

    return Tensor._result(out, (x, weight), backward, "conv2d_depthwise")


# resampling ----------------------------------------------------------------

_SPATIAL_AXES = {"height": 2, "width": 3}


def avg_pool_axis(x: Tensor, axis: str) -> Tensor:
    """Average a (B, C, H, W) map over one named spatial axis.

    ``"width"`` yields (B, C, H); ``"height"`` yields (B, C, W).
    """
    if axis not in _SPATIAL_AXES:
        raise ConfigError(f"axis must be 'height' or 'width', got {axis!r}")
    return x.mean(axis=_SPATIAL_AXES[axis])


def upsample_nearest2x(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return Tensor._result(out, (x,), backward, "upsample2x")


def one_hot(labels: np.ndarray, num_classes: int, dtype=None) -> np.ndarray:
    """(B, H, W) integer labels to a (B, K, H, W) float array."""
    labels = np.asarray(labels)
    eye = np.eye(num_classes, dtype=dtype or as_tensor(0.0).dtype)
    return np.ascontiguousarray(np.moveaxis(eye[labels], -1, 1))
