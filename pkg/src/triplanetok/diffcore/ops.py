"""Differentiable primitives used by the tokenizer."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import _backend
from .tensor import Tensor, as_tensor, make_result


class DimensionError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), bw)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                       lambda g: (g.transpose(inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return make_result(np.array(x.data[idx]), (x,), bw)


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def pad_edge(x: Tensor, width: int = 1) -> Tensor:
    """Replicate-pad the last two axes by ``width`` on every side."""
    lead = [(0, 0)] * (x.ndim - 2)
    data = np.pad(x.data, lead + [(width, width), (width, width)], mode="edge")
    shape = x.shape

    def bw(g):
        w = width
        g = g.copy()
        g[..., w, :] += g[..., :w, :].sum(axis=-2)
        g[..., -w - 1, :] += g[..., -w:, :].sum(axis=-2)
        g = g[..., w:-w, :]
        g[..., :, w] += g[..., :, :w].sum(axis=-1)
        g[..., :, -w - 1] += g[..., :, -w:].sum(axis=-1)
        return (np.ascontiguousarray(g[..., :, w:-w]).reshape(shape),)

    return make_result(data, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {x.shape}")
    k = _backend.kernels
    last = axis % x.ndim == x.ndim - 1
    if last:
        y = k.softmax_forward(np.ascontiguousarray(x.data))
    else:
        z = x.data - x.data.max(axis=axis, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=axis, keepdims=True)
        y = z

    def bw(g):
        if last:
            return (k.softmax_backward(y, g),)
        gy = g * y
        return (gy - y * gy.sum(axis=axis, keepdims=True),)

    return make_result(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d < 1:
        raise DimensionError("layer_norm needs a non-empty last axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias {gain.shape}/{bias.shape} must be ({d},)")
    k = _backend.kernels
    out, xhat, rstd = k.layer_norm_forward(np.ascontiguousarray(x.data), gain.data, bias.data, eps)
    gd = gain.data

    def bw(g):
        gx, gg, gb = k.layer_norm_backward(g, xhat, rstd, gd)
        return (gx if x.requires_grad else None,
                gg if gain.requires_grad else None,
                gb if bias.requires_grad else None)

    return make_result(out, (x, gain, bias), bw, saved=xhat.size)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    k = _backend.kernels
    xd = np.ascontiguousarray(x.data)
    out, t = k.gelu_forward(xd)
    return make_result(out, (x,), lambda g: (k.gelu_backward(xd, t, g),), saved=t.size)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def mse(pred: Tensor, target) -> Tensor:
    pred, target = _coerce(pred, target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    d = sub(pred, target)
    return mean(mul(d, d))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention split over ``heads``.

    q is [B, Lq, D]; k and v are [B, Lk, D]. The output projection is left
    to the caller.
    """
    B, Lq, D = q.shape
    Lk = k.shape[1]
    if D % heads:
        raise DimensionError(f"model dim {D} not divisible by {heads} heads")
    if k.shape != (B, Lk, D) or v.shape != (B, Lk, D):
        raise DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} incompatible")
    dh = D // heads
    qh = transpose(reshape(q, (B, Lq, heads, dh)), (0, 2, 1, 3))
    kt = transpose(reshape(k, (B, Lk, heads, dh)), (0, 2, 3, 1))
    vh = transpose(reshape(v, (B, Lk, heads, dh)), (0, 2, 1, 3))
    scores = matmul(mul(qh, 1.0 / math.sqrt(dh)), kt)
    attn = softmax(scores, axis=-1)
    out = matmul(attn, vh)
    return reshape(transpose(out, (0, 2, 1, 3)), (B, Lq, D))
