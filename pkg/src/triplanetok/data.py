"""Synthetic sprite videos, resizing and temporal cropping."""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sampling import make_rng


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SpriteSceneSpec:
    """Moving rectangles and discs over a background.

    ``speed`` is the sprite displacement in pixels per frame; directions,
    sizes, colours and start positions come from ``seed`` alone, so scenes
    that differ only in speed share their layout.
    """

    n_sprites: int = 2
    speed: float = 1.0
    shapes: tuple[str, ...] = ()
    background: str = "gradient"
    min_size: int = 6
    max_size: int = 12
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.speed) or self.speed < 0:
            raise DataError(f"speed must be finite and non-negative, got {self.speed}")
        if self.background not in ("gradient", "flat"):
            raise DataError(f"unknown background {self.background!r}")
        for s in self.shapes:
            if s not in ("rect", "disc"):
                raise DataError(f"unknown sprite shape {s!r}")
        if self.min_size < 1 or self.max_size < self.min_size:
            raise DataError("invalid sprite size range")


def _reflect(x: np.ndarray, span: float) -> np.ndarray:
    if span <= 0:
        return np.zeros_like(x)
    r = np.mod(x, 2 * span)
    return span - np.abs(r - span)


def gen_sprites(spec: SpriteSceneSpec, T: int, H: int, W: int) -> np.ndarray:
    """Render a [T, H, W, 3] clip; sprites bounce off the frame borders."""
    if min(T, H, W) < 1:
        raise DataError(f"extents must be positive, got {(T, H, W)}")
    rng = make_rng(spec.seed, 0x5bd1)
    yy, xx = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")

    if spec.background == "flat":
        bg = np.broadcast_to(rng.uniform(0.1, 0.9, 3), (H, W, 3)).copy()
    else:
        c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
        ang = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(ang) * xx / W + np.sin(ang) * yy / H)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
        bg = c0 + (c1 - c0) * ramp[..., None]

    sprites = []
    for s in range(spec.n_sprites):
        shape = spec.shapes[s % len(spec.shapes)] if spec.shapes else ("rect", "disc")[int(rng.integers(2))]
        size = int(rng.integers(spec.min_size, spec.max_size + 1))
        size = min(size, H, W)
        color = rng.uniform(0.0, 1.0, 3)
        pos = rng.uniform(0, 1, 2) * [H - size, W - size]
        theta = rng.uniform(0, 2 * np.pi)
        sprites.append((shape, size, color, pos, np.array([np.sin(theta), np.cos(theta)])))

    t = np.arange(T, dtype=np.float64)
    video = np.empty((T, H, W, 3))
    for f in range(T):
        frame = bg.copy()
        for shape, size, color, pos, direction in sprites:
            p = pos + direction * spec.speed * t[f]
            py = _reflect(p[0], H - size)
            px = _reflect(p[1], W - size)
            if shape == "rect":
                mask = (yy >= py) & (yy < py + size) & (xx >= px) & (xx < px + size)
            else:
                r = size / 2
                mask = (yy - py - r) ** 2 + (xx - px - r) ** 2 <= r * r
            frame[mask] = color
        video[f] = frame
    return np.clip(video, 0.0, 1.0)


def sprite_corpus(n: int, T: int, H: int, W: int, speeds: Sequence[float] = (1.0,), seed: int = 0,
                  shared_layout: bool = False, **kw) -> tuple[list[np.ndarray], list[float]]:
    """``n`` clips cycling through ``speeds``; clip ``c`` uses seed (seed, c).

    With ``shared_layout`` each consecutive run of ``len(speeds)`` clips
    reuses one layout, so clips in a run differ only in sprite speed.
    """
    clips, used = [], []
    for c in range(n):
        sp = float(speeds[c % len(speeds)])
        sub = int(make_rng(seed, c // len(speeds) if shared_layout else c).integers(2**31))
        clips.append(gen_sprites(SpriteSceneSpec(speed=sp, seed=sub, **kw), T, H, W))
        used.append(sp)
    return clips, used


def _resize_axis(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = x.shape[axis]
    if n_out == n_in:
        return x
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0, n_in - 1)
    lo = np.minimum(np.floor(src).astype(int), max(n_in - 2, 0))
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    shape = [1] * x.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(x, lo, axis=axis) * (1 - w) + np.take(x, hi, axis=axis) * w


def resize_center_crop(video: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    """Bilinearly scale [T, H, W, C] so it covers (h_out, w_out) with aspect
    preserved, then crop the centre."""
    if h_out < 1 or w_out < 1:
        raise DataError("target size must be positive")
    video = np.asarray(video, dtype=np.float64)
    _, H, W, _ = video.shape
    scale = max(h_out / H, w_out / W)
    hr = max(h_out, int(round(H * scale)))
    wr = max(w_out, int(round(W * scale)))
    v = _resize_axis(_resize_axis(video, hr, 1), wr, 2)
    top = (hr - h_out) // 2
    left = (wr - w_out) // 2
    return np.clip(v[:, top:top + h_out, left:left + w_out], 0.0, 1.0)


def make_batch(source: Sequence[np.ndarray], rng: np.random.Generator, batch_size: int, clip_len: int) -> np.ndarray:
    """``batch_size`` uniform random temporal crops of length ``clip_len``
    from uniformly chosen source videos. Returns [B, clip_len, H, W, C]."""
    if not source:
        raise DataError("empty source corpus")
    for v in source:
        if v.shape[0] < clip_len:
            raise DataError(f"clip_len {clip_len} exceeds video length {v.shape[0]}")
    out = []
    for _ in range(batch_size):
        v = source[int(rng.integers(len(source)))]
        s = int(rng.integers(0, v.shape[0] - clip_len + 1))
        out.append(v[s:s + clip_len])
    return np.stack(out)


def read_png_frames(directory: str) -> np.ndarray:
    """Load numbered PNG frames (sorted by the first integer in each name)
    as a [T, H, W, 3] float video."""
    from PIL import Image

    names = [n for n in os.listdir(directory) if n.lower().endswith(".png")]
    if not names:
        raise DataError(f"no PNG frames in {directory}")

    def key(n):
        m = re.search(r"\d+", n)
        return (int(m.group()) if m else -1, n)

    frames = []
    for n in sorted(names, key=key):
        with Image.open(os.path.join(directory, n)) as im:
            frames.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
    if len({f.shape for f in frames}) != 1:
        raise DataError("PNG frames have differing sizes")
    return np.stack(frames)
