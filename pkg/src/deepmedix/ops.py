"""Primitive differentiable operations on NHWC numpy arrays.

Every forward function accepts a single sample (``H x W x C`` or ``d``) or a
batch with a leading batch axis. Backward functions are pure: they take the
upstream gradient plus whatever forward inputs they need and recompute any
intermediate quantities, so no hidden caches exist.

Convolution is cross-correlation (no kernel flip). Kernels are laid out as
``(K, K, C_in, C_out)`` for standard/pointwise convolution and ``(K, K, C)``
(or ``(K, K, C, multiplier)``) for depthwise convolution.
"""

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rng
from .errors import NonFiniteError, ShapeError


def check_finite(x, where="operation"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values produced by {where}")
    return x


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: str = "same"
    mode: str = "standard"
    multiplier: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1:
            raise ShapeError("kernel_size and stride must be positive")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"unknown padding {self.padding!r}")
        if self.mode not in ("standard", "depthwise", "pointwise"):
            raise ShapeError(f"unknown conv mode {self.mode!r}")
        if self.mode == "pointwise" and self.kernel_size != 1:
            raise ShapeError("pointwise convolution requires kernel_size 1")
        if self.mode == "depthwise":
            if self.multiplier < 1:
                raise ShapeError("depthwise multiplier must be >= 1")
            if self.out_channels != self.in_channels * self.multiplier:
                raise ShapeError("depthwise out_channels must equal in_channels * multiplier")

    @property
    def kernel_shape(self):
        k = self.kernel_size
        if self.mode == "depthwise":
            if self.multiplier == 1:
                return (k, k, self.in_channels)
            return (k, k, self.in_channels, self.multiplier)
        return (k, k, self.in_channels, self.out_channels)

    def output_hw(self, h, w):
        return (conv_output_size(h, self.kernel_size, self.stride, self.padding),
                conv_output_size(w, self.kernel_size, self.stride, self.padding))


def conv_output_size(n, k, stride, padding):
    if padding == "same":
        return -(-n // stride)
    out = (n - k) // stride + 1
    if out < 1:
        raise ShapeError(f"input size {n} too small for kernel {k} with valid padding")
    return out


def _pads(n, k, stride, padding):
    """(low, high) padding; 'same' follows the TensorFlow convention."""
    if padding == "valid":
        return 0, 0
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return total // 2, total - total // 2


def _batched(x, rank):
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _pad_input(x, spec):
    _, h, w, _ = x.shape
    pt, pb = _pads(h, spec.kernel_size, spec.stride, spec.padding)
    pl, pr = _pads(w, spec.kernel_size, spec.stride, spec.padding)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return x, (pt, pb, pl, pr)


def _windows(xp, k, stride, ho, wo):
    """View of shape (B, Ho, Wo, C, k, k)."""
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _im2col(x, spec):
    b, h, w, c = x.shape
    ho, wo = spec.output_hw(h, w)
    k = spec.kernel_size
    xp, pads = _pad_input(x, spec)
    win = _windows(xp, k, spec.stride, ho, wo)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, k * k * c)
    return cols, (ho, wo), pads, xp.shape


def conv2d(x, spec, kernel, bias=None):
    """Standard or pointwise 2-D cross-correlation."""
    if spec.mode == "depthwise":
        return depthwise_conv2d(x, spec, kernel)
    x, single = _batched(x, 3)
    if x.shape[-1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, spec expects {spec.in_channels}")
    if kernel.shape != spec.kernel_shape:
        raise ShapeError(f"kernel shape {kernel.shape} != {spec.kernel_shape}")
    b = x.shape[0]
    wmat = kernel.reshape(-1, spec.out_channels)
    if spec.kernel_size == 1 and spec.stride == 1:
        ho, wo = x.shape[1], x.shape[2]
        y = x.reshape(-1, spec.in_channels) @ wmat
    else:
        cols, (ho, wo), _, _ = _im2col(x, spec)
        y = cols @ wmat
    if bias is not None:
        if bias.shape != (spec.out_channels,):
            raise ShapeError(f"bias shape {bias.shape} != ({spec.out_channels},)")
        y = y + bias
    y = y.reshape(b, ho, wo, spec.out_channels)
    check_finite(y, "conv2d")
    return y[0] if single else y


def conv2d_backward(gy, x, spec, kernel, has_bias=False):
    """Gradients (input, kernel, bias-or-None) of :func:`conv2d`."""
    if spec.mode == "depthwise":
        gx, gk = depthwise_conv2d_backward(gy, x, spec, kernel)
        return gx, gk, None
    x, single = _batched(x, 3)
    gy = gy[None] if single else gy
    b, h, w, c = x.shape
    n = spec.out_channels
    gy2 = gy.reshape(-1, n)
    wmat = kernel.reshape(-1, n)
    gb = gy2.sum(axis=0) if has_bias else None
    if spec.kernel_size == 1 and spec.stride == 1:
        x2 = x.reshape(-1, c)
        gk = (x2.T @ gy2).reshape(kernel.shape)
        gx = (gy2 @ wmat.T).reshape(x.shape)
    else:
        k, s = spec.kernel_size, spec.stride
        cols, (ho, wo), (pt, _, pl, _), pshape = _im2col(x, spec)
        gk = (cols.T @ gy2).reshape(kernel.shape)
        gcols = (gy2 @ wmat.T).reshape(b, ho, wo, k, k, c)
        gxp = np.zeros(pshape, dtype=gy.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += gcols[:, :, :, i, j]
        gx = gxp[:, pt : pt + h, pl : pl + w]
    return (gx[0] if single else gx), gk, gb


def depthwise_conv2d(x, spec, kernel):
    """Per-channel spatial cross-correlation; channel c only sees input channel c."""
    if spec.mode != "depthwise":
        raise ShapeError("depthwise_conv2d requires a depthwise ConvSpec")
    x, single = _batched(x, 3)
    if x.shape[-1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, spec expects {spec.in_channels}")
    if kernel.shape != spec.kernel_shape:
        raise ShapeError(f"kernel shape {kernel.shape} != {spec.kernel_shape}")
    b, h, w, c = x.shape
    k, s, m = spec.kernel_size, spec.stride, spec.multiplier
    ho, wo = spec.output_hw(h, w)
    xp, _ = _pad_input(x, spec)
    kern = kernel.reshape(k, k, c, m)
    y = np.zeros((b, ho, wo, c, m), dtype=np.result_type(x, kernel))
    for i in range(k):
        for j in range(k):
            patch = xp[:, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
            y += patch[..., None] * kern[i, j]
    y = y.reshape(b, ho, wo, c * m)
    check_finite(y, "depthwise_conv2d")
    return y[0] if single else y


def depthwise_conv2d_backward(gy, x, spec, kernel):
    x, single = _batched(x, 3)
    gy = gy[None] if single else gy
    b, h, w, c = x.shape
    k, s, m = spec.kernel_size, spec.stride, spec.multiplier
    ho, wo = spec.output_hw(h, w)
    xp, (pt, _, pl, _) = _pad_input(x, spec)
    kern = kernel.reshape(k, k, c, m)
    gy5 = gy.reshape(b, ho, wo, c, m)
    gxp = np.zeros(xp.shape, dtype=gy.dtype)
    gk = np.zeros((k, k, c, m), dtype=gy.dtype)
    for i in range(k):
        for j in range(k):
            sl = (slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))
            patch = xp[sl]
            if m == 1:
                gk[i, j, :, 0] = np.einsum("bhwc,bhwc->c", patch, gy5[..., 0])
                gxp[sl] += gy5[..., 0] * kern[i, j, :, 0]
            else:
                gk[i, j] = np.einsum("bhwc,bhwcm->cm", patch, gy5)
                gxp[sl] += (gy5 * kern[i, j]).sum(axis=-1)
    gx = gxp[:, pt : pt + h, pl : pl + w]
    return (gx[0] if single else gx), gk.reshape(kernel.shape)


def dense(x, weight, bias=None):
    """``x @ weight + bias`` for a vector or a batch of row vectors."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
        y = y + bias
    return check_finite(y, "dense")


def dense_backward(gy, x, weight):
    """Gradients (input, weight, bias)."""
    x2 = x.reshape(-1, weight.shape[0])
    gy2 = gy.reshape(-1, weight.shape[1])
    return (gy @ weight.T), x2.T @ gy2, gy2.sum(axis=0)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(gy, x):
    # subgradient 0 at x == 0
    return gy * (x > 0)


def softmax(logits, axis=-1):
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("softmax received non-finite logits")
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(gy, probs, axis=-1):
    """Vector-Jacobian product through softmax given its output."""
    return probs * (gy - (gy * probs).sum(axis=axis, keepdims=True))


@dataclass(frozen=True)
class DropoutSpec:
    p: float
    training: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {self.p}")


def dropout(x, spec):
    """Inverted dropout with drop probability ``spec.p``.

    Returns ``(y, mask)`` where ``mask`` is the multiplier applied to ``x``
    (0 or ``1/(1-p)``), so the backward pass is ``gy * mask``.
    """
    if not spec.training or spec.p == 0.0:
        return x.copy(), np.ones_like(x)
    keep = rng.uniform(spec.seed, x.shape) >= spec.p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - spec.p))
    return x * mask, mask


def dropout_backward(gy, mask):
    return gy * mask


@dataclass(frozen=True)
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        n = self.gamma.shape
        if not (self.beta.shape == self.running_mean.shape == self.running_var.shape == n) or len(n) != 1:
            raise ShapeError("batch-norm vectors must share one per-channel length")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be non-negative")

    @classmethod
    def fresh(cls, channels, dtype=np.float64, **kw):
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype), **kw)


def _bn_stats(x, state, training):
    if x.shape[-1] != state.gamma.shape[0]:
        raise ShapeError(f"batch-norm expects {state.gamma.shape[0]} channels, got {x.shape[-1]}")
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.mean(axis=axes)
        var = ((x - mean) ** 2).mean(axis=axes)
    else:
        mean, var = state.running_mean, state.running_var
    return axes, mean, var


def batch_norm(x, state, training):
    """Per-channel normalization over every axis but the last.

    Returns ``(y, new_state)``; only training mode changes the running
    statistics (``running = momentum * running + (1 - momentum) * batch``).
    """
    _, mean, var = _bn_stats(x, state, training)
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    y = (x - mean) * (inv_std * state.gamma) + state.beta
    check_finite(y, "batch_norm")
    if training:
        mo = state.momentum
        state = replace(state,
                        running_mean=(mo * state.running_mean + (1 - mo) * mean).astype(state.running_mean.dtype),
                        running_var=(mo * state.running_var + (1 - mo) * var).astype(state.running_var.dtype))
    return y.astype(x.dtype, copy=False), state


def batch_norm_backward(gy, x, state, training):
    """Gradients (input, gamma, beta)."""
    axes, mean, var = _bn_stats(x, state, training)
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean) * inv_std
    ggamma = (gy * xhat).sum(axis=axes)
    gbeta = gy.sum(axis=axes)
    gxhat = gy * state.gamma
    if training:
        m = x.size // x.shape[-1]
        gx = (inv_std / m) * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
    else:
        gx = gxhat * inv_std
    return gx.astype(x.dtype, copy=False), ggamma, gbeta


def global_avg_pool(x):
    x, single = _batched(x, 3)
    h, w = x.shape[1:3]
    y = x.sum(axis=(1, 2)) / (h * w)
    return y[0] if single else y


def global_avg_pool_backward(gy, x):
    h, w = x.shape[-3:-1]
    return np.broadcast_to((gy / (h * w))[..., None, None, :], x.shape).copy()


def global_max_pool(x):
    x, single = _batched(x, 3)
    y = x.max(axis=(1, 2))
    return y[0] if single else y


def global_max_pool_backward(gy, x):
    """Routes each channel's gradient to its first (row-major) maximum."""
    xb, single = _batched(x, 3)
    gyb = gy[None] if single else gy
    b, h, w, c = xb.shape
    idx = xb.reshape(b, h * w, c).argmax(axis=1)
    gx = np.zeros((b, h * w, c), dtype=gy.dtype)
    bi, ci = np.meshgrid(np.arange(b), np.arange(c), indexing="ij")
    gx[bi, idx, ci] = gyb
    gx = gx.reshape(xb.shape)
    return gx[0] if single else gx


def concat(a, b):
    """Join along the feature (last) axis; a leading batch axis is allowed."""
    if a.ndim != b.ndim or a.ndim not in (1, 2) or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=-1)


def concat_backward(gy, d1):
    return gy[..., :d1], gy[..., d1:]
