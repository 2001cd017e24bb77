"""Neural-network primitives with hand-written backward rules."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .tensor import DTYPE, Tensor, _result, _tally, as_tensor

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"layer_norm: last axis must be non-empty, got shape {x.shape}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match C={c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def bw(g):
        gxhat = g * gd
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, c)
        return gx, (g2 * xhat.reshape(-1, c)).sum(axis=0), g2.sum(axis=0)

    return _result("layer_norm", out, (x, gamma, beta), bw)


def gelu(x) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = xd * cdf

    def bw(g):
        return (g * (cdf + xd * _INV_SQRT2PI * np.exp(-0.5 * xd * xd)),)

    return _result("gelu", out, (x,), bw)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result("softmax", out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result("log_softmax", out, (x,), bw)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits[B, K]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    ld = logits.data
    shifted = ld - ld.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    b = ld.shape[0]
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / b,)

    return _result("cross_entropy", np.asarray(loss, dtype=DTYPE), (logits,), bw)


def depthwise_conv3d(x, kernel) -> Tensor:
    """Per-channel 3x3x3 convolution over ``x[..., T, H, W, C]``.

    Zero padding 1 on T, H and W; stride 1; output shape equals input shape.
    Taps are accumulated in (dt, dh, dw) row-major order.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim < 4:
        raise ShapeError(f"depthwise_conv3d: expected [..., T, H, W, C], got {x.shape}")
    t, h, w, c = x.shape[-4:]
    if kernel.shape != (3, 3, 3, c):
        raise ShapeError(f"depthwise_conv3d: kernel must be (3, 3, 3, {c}), got {kernel.shape}")
    lead = x.ndim - 4
    pad = [(0, 0)] * lead + [(1, 1), (1, 1), (1, 1), (0, 0)]
    xp = np.pad(x.data, pad)
    kd = kernel.data
    out = np.zeros(x.shape, dtype=DTYPE)
    for a in range(3):
        for b in range(3):
            for d in range(3):
                out += xp[..., a:a + t, b:b + h, d:d + w, :] * kd[a, b, d]
    _tally("depthwise_conv3d", x.size * 27)

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        gk = np.zeros_like(kd)
        red = tuple(range(g.ndim - 1))
        for a in range(3):
            for b in range(3):
                for d in range(3):
                    gxp[..., a:a + t, b:b + h, d:d + w, :] += g * kd[a, b, d]
                    gk[a, b, d] = (xp[..., a:a + t, b:b + h, d:d + w, :] * g).sum(axis=red)
        return gxp[..., 1:t + 1, 1:h + 1, 1:w + 1, :], gk

    return _result("depthwise_conv3d", out, (x, kernel), bw)


def depthwise_conv1d(x, kernel, bias=None) -> Tensor:
    """Per-channel kernel-3 stride-1 convolution along the time axis of ``x[..., T, C]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    t, c = x.shape[-2:]
    if kernel.shape != (3, c):
        raise ShapeError(f"depthwise_conv1d: kernel must be (3, {c}), got {kernel.shape}")
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (0, 0)]
    xp = np.pad(x.data, pad)
    kd = kernel.data
    out = np.zeros(x.shape, dtype=DTYPE)
    for a in range(3):
        out += xp[..., a:a + t, :] * kd[a]
    _tally("depthwise_conv1d", x.size * 3)
    inputs: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs = (x, kernel, bias)

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        gk = np.zeros_like(kd)
        red = tuple(range(g.ndim - 1))
        for a in range(3):
            gxp[..., a:a + t, :] += g * kd[a]
            gk[a] = (xp[..., a:a + t, :] * g).sum(axis=red)
        gx = gxp[..., 1:t + 1, :]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=red)

    return _result("depthwise_conv1d", out, inputs, bw)


def max_pool1d(x) -> Tensor:
    """Kernel-2 stride-2 max pooling along the time axis of ``x[..., T, C]``.

    A trailing odd frame is dropped.
    """
    x = as_tensor(x)
    t, c = x.shape[-2:]
    half = t // 2
    if half == 0:
        raise ShapeError(f"max_pool1d: need at least 2 steps, got shape {x.shape}")
    lead = x.shape[:-2]
    win = x.data[..., :2 * half, :].reshape(*lead, half, 2, c)
    pick = win.argmax(axis=-2)
    out = np.take_along_axis(win, pick[..., None, :], axis=-2)[..., 0, :]
    shape = x.shape

    def bw(g):
        gw = np.zeros(win.shape, dtype=DTYPE)
        np.put_along_axis(gw, pick[..., None, :], g[..., None, :], axis=-2)
        full = np.zeros(shape, dtype=DTYPE)
        full[..., :2 * half, :] = gw.reshape(*lead, 2 * half, c)
        return (full,)

    return _result("max_pool1d", out, (x,), bw)
