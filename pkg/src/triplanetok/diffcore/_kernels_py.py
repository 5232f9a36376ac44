"""Pure-numpy reference kernels. Same signatures as the compiled ``_kernels``.

All arrays are C-contiguous; row-wise kernels work over the last axis.
"""
from __future__ import annotations

import math

import numpy as np

NAME = "numpy"
_C = math.sqrt(2.0 / math.pi)


def gelu_forward(x):
    t = np.tanh(_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(x, t, g):
    dinner = _C * (1.0 + 3 * 0.044715 * (x * x))
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def softmax_forward(x):
    z = x - x.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def softmax_backward(y, g):
    gy = g * y
    gy -= y * gy.sum(axis=-1, keepdims=True)
    return gy


def layer_norm_forward(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd


def layer_norm_backward(g, xhat, rstd, gain):
    lead = tuple(range(g.ndim - 1))
    ggain = (g * xhat).sum(axis=lead)
    gbias = g.sum(axis=lead)
    gxh = g * gain
    gx = rstd * (gxh - gxh.mean(axis=-1, keepdims=True) - xhat * (gxh * xhat).mean(axis=-1, keepdims=True))
    return gx, ggain, gbias


def bilinear_gather(table, idx, wts):
    """Sum over the four corners of ``wts[c, :, None] * table[idx[c]]``."""
    out = wts[0][:, None] * table[idx[0]]
    for c in range(1, 4):
        out += wts[c][:, None] * table[idx[c]]
    return out


def bilinear_scatter(g, idx, wts, rows):
    acc = np.zeros((rows, g.shape[1]), dtype=g.dtype)
    for c in range(4):
        np.add.at(acc, idx[c], wts[c][:, None] * g)
    return acc
