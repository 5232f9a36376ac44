"""Finite-difference gradient verification."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    out = np.empty(flat.size, dtype=np.float64)
    with no_grad():
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = float(f(x).data)
            flat[idx] = orig - h
            fm = float(f(x).data)
            flat[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite function value at element {idx}")
            out[idx] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over elements of |analytic - numeric| / max(1, |numeric|).

    ``x`` must be a float64 leaf; ``f`` must return a scalar tensor.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check requires a float64 tensor")
    x.requires_grad = True
    x.zero_grad()
    y = f(x)
    if y.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise FloatingPointError("non-finite function value")
    if y.requires_grad:
        backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    analytic = analytic.copy()
    x.zero_grad()
    num = numeric_grad(f, x, h)
    return float(np.max(np.abs(analytic - num) / np.maximum(1.0, np.abs(num))))
