"""Patch-centre coordinates and the random-patch / random-frame samplers.

All randomness comes from ``numpy.random.Generator`` over PCG64, seeded
through ``SeedSequence`` so a draw is a pure function of its seed words.
Selections without replacement use a partial Fisher-Yates shuffle driven by
``Generator.integers`` so the sequence does not depend on numpy's
``choice`` internals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .diffcore.interp import cell_and_weights


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderGrid:
    gt: int
    gh: int
    gw: int

    def __post_init__(self):
        if min(self.gt, self.gh, self.gw) < 1:
            raise SamplingError(f"grid extents must be >= 1, got {self}")

    @property
    def M(self) -> int:
        return self.gt * self.gh * self.gw

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.gt, self.gh, self.gw

    @classmethod
    def of(cls, cfg: ModelConfig) -> "DecoderGrid":
        return cls(*cfg.dec_grid)


def make_rng(*words: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(w) for w in words])))


def coord_of_patch(idx, grid: DecoderGrid) -> np.ndarray:
    """Centre (i, j, k) of patch (t, h, w); accepts [..., 3] index arrays."""
    idx = np.asarray(idx)
    t, h, w = idx[..., 0], idx[..., 1], idx[..., 2]
    if (np.any(t < 0) or np.any(t >= grid.gt) or np.any(h < 0) or np.any(h >= grid.gh)
            or np.any(w < 0) or np.any(w >= grid.gw)):
        raise SamplingError(f"patch index {idx.tolist()} outside grid {grid.shape}")
    return np.stack([(h + 0.5) / grid.gh, (w + 0.5) / grid.gw, (t + 0.5) / grid.gt], axis=-1)


def unravel(flat, grid: DecoderGrid) -> np.ndarray:
    return np.stack(np.unravel_index(np.asarray(flat), grid.shape), axis=-1)


def grid_cell_of_coord(c, extents: tuple[int, int, int]):
    """Clamped lower grid indices (l, m, n) and fractional weights of a
    coordinate against plane extents (H', W', T')."""
    c = np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise SamplingError("non-finite coordinate")
    idx, wts = [], []
    for col, n in enumerate(extents):
        lo, _, frac = cell_and_weights(c[..., col] * (n - 1), n)
        idx.append(lo)
        wts.append(frac)
    return tuple(idx), tuple(wts)


def choose_distinct(rng: np.random.Generator, n_total: int, k: int) -> np.ndarray:
    """``k`` distinct values from ``range(n_total)``, uniformly, in draw order."""
    if not 0 <= k <= n_total:
        raise SamplingError(f"cannot draw {k} distinct items from {n_total}")
    pool = np.arange(n_total)
    for a in range(k):
        b = int(rng.integers(a, n_total))
        pool[a], pool[b] = pool[b], pool[a]
    return pool[:k].copy()


def sample_random_patch(rng: np.random.Generator, grid: DecoderGrid, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Centres of ``n`` distinct uniformly chosen patches.

    Returns (coords [n, 3], flat patch indices [n]).
    """
    if n < 1 or n > grid.M:
        raise SamplingError(f"N={n} must be in [1, {grid.M}]")
    flat = choose_distinct(rng, grid.M, n)
    return coord_of_patch(unravel(flat, grid), grid), flat


def sample_random_frame(rng: np.random.Generator, grid: DecoderGrid, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """All patch centres of ``n_frames`` distinct temporal slices.

    Returns (coords [n_frames*G_h*G_w, 3], flat patch indices), grouped by
    frame in draw order and row-major within a frame.
    """
    if n_frames < 1 or n_frames > grid.gt:
        raise SamplingError(f"n_frames={n_frames} must be in [1, {grid.gt}]")
    frames = choose_distinct(rng, grid.gt, n_frames)
    per = grid.gh * grid.gw
    flat = (frames[:, None] * per + np.arange(per)[None, :]).ravel()
    return coord_of_patch(unravel(flat, grid), grid), flat
