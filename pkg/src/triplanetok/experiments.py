"""Desk-scale experiments shared by the CLI and the acceptance suite:
random-patch vs random-frame sampling, and reconstruction quality against
clip dynamics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .config import ConfigError, ModelConfig, PatchSpec, TrainConfig
from .data import sprite_corpus
from .metrics import dynamics_magnitude, pearson_r, psnr
from .model import init_params, reconstruct_full, tokenize
from .train import TrainState, fit, heldout_l2

# 32-frame 16x16 clips with single-frame decoder patches, so one frame is
# 16 of the 512 patch coordinates (3.125%).
ABLATION_MODEL = ModelConfig(
    frames=32, height=16, width=16,
    enc_patch=PatchSpec(2, 4, 4), dec_patch=PatchSpec(1, 4, 4),
    enc_layers=2, enc_dim=64, enc_heads=4,
    cs_layers=2, cs_dim=64, cs_heads=4,
    dec_layers=2, dec_dim=64, dec_heads=4,
    plane_h=4, plane_w=4, plane_t=16, latent_dim=8,
)


def coords_for_ratio(mcfg: ModelConfig, ratio: float) -> tuple[int, int]:
    """(patch count N, whole frames) for a coordinate ratio of the decoder
    grid. The ratio must select a whole number of frames."""
    gt, gh, gw = mcfg.dec_grid
    M = gt * gh * gw
    n = ratio * M
    per_frame = gh * gw
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ConfigError(f"ratio {ratio} of {M} patches is not a whole number of patches")
    n = int(round(n))
    if n % per_frame:
        raise ConfigError(f"{n} patches is not a whole number of {per_frame}-patch frames")
    return n, n // per_frame


@dataclass
class AblationRun:
    seed: int
    sampler: str
    steps: list[int] = field(default_factory=list)
    heldout: list[float] = field(default_factory=list)

    @property
    def final(self) -> float:
        return self.heldout[-1]


def sampling_ablation(seed: int, steps: int = 2000, ratio: float = 0.03125, n_train: int = 64, n_heldout: int = 8,
                      batch_size: int = 4, lr: float = 3e-4, eval_every: int = 500,
                      mcfg: ModelConfig = ABLATION_MODEL, speeds: Sequence[float] = (0.5, 1.0, 2.0),
                      on_eval: Callable[[AblationRun], None] | None = None) -> dict[str, AblationRun]:
    """Train the same initial model with each sampler on one corpus and
    track held-out full-reconstruction l2."""
    n, frames = coords_for_ratio(mcfg, ratio)
    train, _ = sprite_corpus(n_train, mcfg.frames, mcfg.height, mcfg.width, speeds, seed=seed)
    held, _ = sprite_corpus(n_heldout, mcfg.frames, mcfg.height, mcfg.width, speeds, seed=seed + 10_000)
    out = {}
    for sampler in ("patch", "frame"):
        tcfg = TrainConfig(batch_size=batch_size, steps=steps, num_coords=n, n_frames=frames, lr=lr,
                           sampler=sampler, seed=seed)
        params = init_params(mcfg, seed)
        state = TrainState.fresh(tcfg)
        run = AblationRun(seed=seed, sampler=sampler)
        done = 0
        while done < steps:
            k = min(eval_every, steps - done)
            fit(train, params, state, tcfg, mcfg, steps=k)
            done += k
            run.steps.append(done)
            run.heldout.append(heldout_l2(held, params, mcfg))
            if on_eval is not None:
                on_eval(run)
        out[sampler] = run
    return out


def clip_psnrs(clips: Sequence[np.ndarray], params, mcfg: ModelConfig) -> list[float]:
    out = []
    for v in clips:
        with dc.no_grad():
            z = tokenize(v, params, mcfg)
        rec = np.clip(reconstruct_full(z, params, mcfg)[0], 0.0, 1.0)
        out.append(psnr(v, rec))
    return out


@dataclass
class DynamicsResult:
    r: float
    psnr: list[float]
    dynamics: list[float]
    speeds: list[float]


def dynamics_correlation(params, mcfg: ModelConfig, n_eval: int = 32, speeds: Sequence[float] = (0.0, 1.0, 2.0, 4.0),
                         seed: int = 1, shared_layout: bool = False) -> DynamicsResult:
    """Pearson r between per-clip PSNR and dynamics magnitude on a
    mixed-speed sprite set."""
    clips, used = sprite_corpus(n_eval, mcfg.frames, mcfg.height, mcfg.width, speeds, seed=seed,
                                shared_layout=shared_layout)
    ps = clip_psnrs(clips, params, mcfg)
    dyn = [dynamics_magnitude(v) for v in clips]
    return DynamicsResult(r=pearson_r(ps, dyn), psnr=ps, dynamics=dyn, speeds=used)
