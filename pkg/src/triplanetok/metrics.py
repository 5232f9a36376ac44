"""Reconstruction quality and video-property metrics.

Videos are [T, H, W, C] arrays in [0, 1]. Frame-level scores are averaged
over frames.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSNR_CAP = 100.0
DYNAMICS_EPS = 1e-8
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

METADATA = {
    "psnr_cap_db": PSNR_CAP,
    "dynamics_log_eps": DYNAMICS_EPS,
    "sobel_padding": "replicate",
    "ssim": {"window": SSIM_WIN, "sigma": SSIM_SIGMA, "k1": SSIM_K1, "k2": SSIM_K2, "region": "valid"},
    "averaging": "per-frame then mean over frames",
}


class MetricError(ValueError):
    pass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 4:
        raise MetricError(f"expected [T, H, W, C] videos, got shape {a.shape}")
    return a, b


def psnr(a, b, max_val: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        per = np.where(mse > 0, 10.0 * np.log10(max_val ** 2 / np.maximum(mse, 1e-300)), PSNR_CAP)
    return float(np.minimum(per, PSNR_CAP).mean())


def _gaussian_window(n: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n) - (n - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over axes 1 and 2 of [T, H, W, C]."""
    n = len(g)
    H, W = x.shape[1], x.shape[2]
    rows = sum(g[i] * x[:, i:H - n + 1 + i] for i in range(n))
    return sum(g[i] * rows[:, :, i:W - n + 1 + i] for i in range(n))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM (11x11 Gaussian, sigma 1.5) over the valid region,
    averaged over channels and then frames."""
    a, b = _pair(a, b)
    if a.shape[1] < SSIM_WIN or a.shape[2] < SSIM_WIN:
        raise MetricError(f"frames {a.shape[1:3]} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    g = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    per_frame = smap.mean(axis=(1, 2)).mean(axis=-1)
    return float(per_frame.mean())


def dynamics_raw(v) -> float:
    """Mean over consecutive frame pairs of the per-pixel RGB l2 distance."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4 or v.shape[0] < 2:
        raise MetricError("dynamics needs a [T, H, W, C] video with T >= 2")
    d = np.sqrt(((v[1:] - v[:-1]) ** 2).sum(axis=-1))
    return float(d.mean(axis=(1, 2)).mean())


def dynamics_magnitude(v) -> float:
    return math.log(dynamics_raw(v) + DYNAMICS_EPS)


def sobel_magnitude(frames: np.ndarray) -> np.ndarray:
    """Per-pixel Sobel gradient magnitude of [T, H, W, C] frames (channel
    mean, replicate padding) -> [T, H, W]."""
    gray = np.asarray(frames, dtype=np.float64).mean(axis=-1)
    p = np.pad(gray, ((0, 0), (1, 1), (1, 1)), mode="edge")
    H, W = gray.shape[1:]

    def win(dy, dx):
        return p[:, dy:dy + H, dx:dx + W]

    gx = (win(0, 2) + 2 * win(1, 2) + win(2, 2)) - (win(0, 0) + 2 * win(1, 0) + win(2, 0))
    gy = (win(2, 0) + 2 * win(2, 1) + win(2, 2)) - (win(0, 0) + 2 * win(0, 1) + win(0, 2))
    return np.sqrt(gx * gx + gy * gy)


def frequency_magnitude(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4 or v.shape[1] < 3 or v.shape[2] < 3:
        raise MetricError("frequency magnitude needs frames of at least 3x3")
    return float(sobel_magnitude(v).mean(axis=(1, 2)).mean())


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise MetricError("pearson_r needs two equal-length sequences of at least 2 values")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt((dx * dx).sum()), math.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise MetricError("correlation undefined for zero-variance input")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def standardize(values: Sequence[float]) -> list[float]:
    """Min-max map onto [0, 100] for reporting."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    if span == 0:
        return [0.0] * len(v)
    return list((v - v.min()) / span * 100.0)


@dataclass
class MetricReport:
    ids: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    dynamics: list[float] = field(default_factory=list)
    frequency: list[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.ids)

    def add(self, vid: str, original, recon) -> None:
        self.ids.append(vid)
        self.psnr.append(psnr(original, recon))
        self.ssim.append(ssim(original, recon))
        self.dynamics.append(dynamics_magnitude(original))
        self.frequency.append(frequency_magnitude(original))

    def means(self) -> dict[str, float]:
        return {k: float(np.mean(getattr(self, k))) for k in ("psnr", "ssim", "dynamics", "frequency")}

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "psnr", "ssim", "dynamics", "frequency"])
            for row in zip(self.ids, self.psnr, self.ssim, self.dynamics, self.frequency):
                w.writerow([row[0]] + [f"{x:.6f}" for x in row[1:]])
            m = self.means()
            w.writerow(["mean"] + [f"{m[k]:.6f}" for k in ("psnr", "ssim", "dynamics", "frequency")])
        with open(path + ".meta.json", "w") as fh:
            json.dump({**METADATA, "count": self.count}, fh, indent=2, sort_keys=True)
