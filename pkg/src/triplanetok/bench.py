"""Training-step memory measurements and the max-feasible-batch estimate.

Memory is counted in live tensor elements (see ``diffcore.track_peak``),
which makes every number here deterministic and hardware independent.
"""
from __future__ import annotations

import csv
import gc
from dataclasses import asdict, dataclass

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import SpriteSceneSpec, gen_sprites
from .model import init_params, param_count
from .train import TrainState, full_frame_step, train_step_main

MODES = ("random-patch", "full-frame")


@dataclass
class BenchCell:
    frames: int
    mode: str
    num_coords: int
    params: int
    peak_live_elements: int
    dec_peak_live_elements: int
    max_batch: int
    budget: float

    def row(self) -> dict:
        return asdict(self)


def step_peak(mcfg: ModelConfig, mode: str, batch_size: int = 1, num_coords: int = 64, seed: int = 0,
              params=None) -> tuple[int, int, int]:
    """(whole-step peak, decoder-side peak, parameter count) for one
    training step without the optimiser update.

    Whole-step peak is absolute: resident parameters plus everything
    allocated during forward and backward, gradients included.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if params is None:
        params = init_params(mcfg, seed)
    clip = gen_sprites(SpriteSceneSpec(seed=seed), mcfg.frames, mcfg.height, mcfg.width)
    batch = np.repeat(clip[None], batch_size, axis=0)
    tcfg = TrainConfig(batch_size=batch_size, num_coords=num_coords, seed=seed)
    state = TrainState.fresh(tcfg)
    gc.collect()
    if mode == "random-patch":
        res = train_step_main(batch, params, state, tcfg, mcfg, update=False)
    else:
        res = full_frame_step(batch, params, state, mcfg, update=False)
    for p in params.values():
        p.zero_grad()
    P = param_count(params)
    return P + res.peak_elems, res.dec_peak_elems, P


def max_feasible_batch(peak1: int, n_params: int, budget: float) -> int:
    """Largest batch whose step fits ``budget`` elements.

    Uses peak(B) = fixed + B * (peak(1) - fixed) with fixed = parameters
    plus their gradients; the per-sample part scales linearly with B.
    """
    fixed = 2 * n_params
    per = peak1 - fixed
    if per <= 0:
        raise ValueError("per-sample footprint must be positive")
    return max(0, int((budget - fixed) // per))


def bench_cells(base: ModelConfig, frames: list[int], budget: float, num_coords: int = 64,
                modes=MODES, seed: int = 0, on_cell=None) -> list[BenchCell]:
    """Sweep clip lengths x sampling modes with plane dims held fixed.

    Cells run one after another so each measurement starts clean.
    """
    cells = []
    for T in frames:
        mcfg = base.replace(frames=T)
        params = init_params(mcfg, seed)
        for mode in modes:
            peak, dec_peak, P = step_peak(mcfg, mode, 1, num_coords, seed, params)
            cell = BenchCell(frames=T, mode=mode, num_coords=num_coords if mode == "random-patch" else
                             int(np.prod(mcfg.dec_grid)), params=P, peak_live_elements=peak,
                             dec_peak_live_elements=dec_peak, max_batch=max_feasible_batch(peak, P, budget),
                             budget=float(budget))
            cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
        del params
    return cells


def write_bench_csv(path: str, cells: list[BenchCell]) -> None:
    fields = list(BenchCell.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for c in cells:
            w.writerow(c.row())
