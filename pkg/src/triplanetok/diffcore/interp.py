"""Bilinear lookups into 2D latent grids."""
from __future__ import annotations

import numpy as np

from . import _backend
from .tensor import Tensor, make_result


class CoordinateError(ValueError):
    pass


def cell_and_weights(u: np.ndarray, extent: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower node index, upper node index and fractional weight for grid
    positions ``u`` in ``[0, extent - 1]``.

    The lower index is clamped to ``extent - 2`` so the upper neighbour always
    exists; an extent of 1 degenerates to a constant lookup.
    """
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise CoordinateError("non-finite grid position")
    if extent == 1:
        zero = np.zeros(u.shape, dtype=np.int64)
        return zero, zero, np.zeros(u.shape)
    u = np.clip(u, 0.0, extent - 1)
    lo = np.minimum(np.floor(u).astype(np.int64), extent - 2)
    return lo, lo + 1, u - lo


def bilinear_sample(plane: Tensor, u, w) -> Tensor:
    """Sample ``plane`` [..., A, B, D] at fractional positions (u, w).

    ``u`` and ``w`` share the plane's leading batch shape plus one query axis
    (or are scalars for an unbatched plane). Returns [..., N, D]. Gradients
    flow to the plane values only.
    """
    *batch, A, Bx, D = plane.shape
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    scalar = u.ndim == len(batch)
    if scalar:
        u, w = u[..., None], w[..., None]
    if u.shape != w.shape or tuple(u.shape[:-1]) != tuple(batch):
        raise CoordinateError(f"query shape {u.shape}/{w.shape} does not match plane batch {tuple(batch)}")
    nb = int(np.prod(batch)) if batch else 1
    N = u.shape[-1]
    l0, l1, fu = cell_and_weights(u.reshape(nb, N), A)
    m0, m1, fw = cell_and_weights(w.reshape(nb, N), Bx)

    dt = plane.dtype
    fu = fu.astype(dt)
    fw = fw.astype(dt)
    gu, gw = 1 - fu, 1 - fw
    wts = np.stack([gu * gw, gu * fw, fu * gw, fu * fw]).reshape(4, nb * N)

    base = (np.arange(nb) * (A * Bx))[:, None]
    idx = np.stack([base + l0 * Bx + m0, base + l0 * Bx + m1,
                    base + l1 * Bx + m0, base + l1 * Bx + m1]).reshape(4, nb * N)
    rows = nb * A * Bx
    k = _backend.kernels
    out = k.bilinear_gather(np.ascontiguousarray(plane.data).reshape(rows, D), idx, wts)
    shape = plane.shape

    def bw(g):
        g = np.ascontiguousarray(g, dtype=dt).reshape(nb * N, D)
        return (k.bilinear_scatter(g, idx, wts, rows).reshape(shape),)

    out = out.reshape(*batch, N, D)
    if scalar:
        out = out[..., 0, :]
    return make_result(out, (plane,), bw)
