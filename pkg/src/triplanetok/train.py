"""Two-phase optimisation: random-coordinate l2 training, then frame-sampled
fine-tuning with an added perceptual term."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import diffcore as dc
from .config import ModelConfig, TrainConfig
from .diffcore import Tensor
from .model import Params, Triplane, decode_coords, patchify, tokenize
from .sampling import DecoderGrid, make_rng, sample_random_frame, sample_random_patch

# seed-sequence stream tags
STREAM_BATCH = 1
STREAM_COORDS = 2


def deterministic_mode():
    """Context pinning BLAS to one thread so reductions run in a fixed order."""
    return threadpool_limits(limits=1)


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


class ContractError(ValueError):
    pass


@dataclass
class TrainState:
    step: int = 0
    seed: int = 0
    opt: dc.AdamWState = field(default_factory=dc.AdamWState)
    loss_ema: float | None = None
    last_loss: float | None = None

    @classmethod
    def fresh(cls, tcfg: TrainConfig) -> "TrainState":
        opt = dc.AdamWState(lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps,
                            weight_decay=tcfg.weight_decay)
        return cls(step=0, seed=tcfg.seed, opt=opt)

    def meta(self) -> dict:
        o = self.opt
        return {"step": self.step, "seed": self.seed, "loss_ema": self.loss_ema, "last_loss": self.last_loss,
                "opt": {"lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps,
                        "weight_decay": o.weight_decay, "step": o.step}}

    @classmethod
    def from_meta(cls, meta: dict, m: dict[str, np.ndarray], v: dict[str, np.ndarray]) -> "TrainState":
        opt = dc.AdamWState(**meta["opt"], m=dict(m), v=dict(v))
        return cls(step=meta["step"], seed=meta["seed"], opt=opt,
                   loss_ema=meta.get("loss_ema"), last_loss=meta.get("last_loss"))


@dataclass
class StepResult:
    step: int
    phase: str
    loss: float
    l2: float
    perceptual: float
    peak_elems: int
    dec_peak_elems: int
    ms: float

    def record(self) -> dict:
        return {"step": self.step, "phase": self.phase, "l2": self.l2, "perceptual": self.perceptual,
                "peak_elems": self.peak_elems, "ms": round(self.ms, 3)}


# ---------------------------------------------------------------------------
# losses


def loss_l2(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    return dc.mse(pred, target)


_SOBEL_X = ((-1, 0, 1), (-2, 0, 2), (-1, 0, 1))


def sobel_edges(frames) -> Tensor:
    """Horizontal and vertical Sobel responses of the channel-mean image with
    replicate padding. frames [F, H, W, C] -> [2, F, H, W]."""
    frames = dc.as_tensor(frames)
    if frames.ndim != 4:
        raise ContractError(f"expected full frames [F, H, W, C], got shape {frames.shape}")
    F, H, W, _ = frames.shape
    if H < 3 or W < 3:
        raise ContractError("frames must be at least 3x3")
    gray = dc.pad_edge(dc.mean(frames, axis=-1))
    gx = gy = None
    for dy in range(3):
        for dx in range(3):
            kx, ky = _SOBEL_X[dy][dx], _SOBEL_X[dx][dy]
            if not (kx or ky):
                continue
            win = dc.getitem(gray, (slice(None), slice(dy, dy + H), slice(dx, dx + W)))
            if kx:
                gx = win * float(kx) if gx is None else gx + win * float(kx)
            if ky:
                gy = win * float(ky) if gy is None else gy + win * float(ky)
    return dc.concat([dc.reshape(gx, (1, F, H, W)), dc.reshape(gy, (1, F, H, W))], axis=0)


def perceptual_proxy_loss(pred, target) -> Tensor:
    """Edge-map stand-in for a learned perceptual distance: mean squared
    difference of Sobel responses of full frames [F, H, W, C]."""
    pred = dc.as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ContractError(f"frame shapes differ: {pred.shape} vs {target.shape}")
    with dc.no_grad():
        t_edges = sobel_edges(target).data
    return dc.mse(sobel_edges(pred), t_edges)


def frames_from_patches(patches: Tensor, n_frames: int, grid: DecoderGrid, mcfg: ModelConfig) -> Tensor:
    """Reassemble [B, n_frames*G_h*G_w, P] decoded patches of whole temporal
    slices into frames [B*n_frames*pt, H, W, C]."""
    B, N, P = patches.shape
    if N != n_frames * grid.gh * grid.gw:
        raise ContractError(f"{N} patches do not cover {n_frames} full frames of {grid.gh}x{grid.gw} patches")
    sp = mcfg.dec_patch
    C = mcfg.channels
    x = dc.reshape(patches, (B, n_frames, grid.gh, grid.gw, sp.pt, sp.ph, sp.pw, C))
    x = dc.transpose(x, (0, 1, 4, 2, 5, 3, 6, 7))
    return dc.reshape(x, (B * n_frames * sp.pt, grid.gh * sp.ph, grid.gw * sp.pw, C))


# ---------------------------------------------------------------------------
# steps


def _sample(tcfg: TrainConfig, state: TrainState, grid: DecoderGrid, B: int, scheme: str, count: int):
    coords, flats = [], []
    for b in range(B):
        rng = make_rng(state.seed, state.step, STREAM_COORDS, b)
        if scheme == "patch":
            c, f = sample_random_patch(rng, grid, count)
        else:
            c, f = sample_random_frame(rng, grid, count)
        coords.append(c)
        flats.append(f)
    return np.stack(coords), np.stack(flats)


def _run_step(batch: np.ndarray, params: Params, state: TrainState, mcfg: ModelConfig, coords: np.ndarray,
              flats: np.ndarray, phase: str, perceptual_weight: float = 0.0, n_frames: int = 0,
              update: bool = True) -> StepResult:
    t0 = time.perf_counter()
    batch = np.asarray(batch)
    if batch.ndim == 4:
        batch = batch[None]
    dtype = params["enc.pos"].dtype
    grid = DecoderGrid.of(mcfg)
    patches, _ = patchify(batch.astype(dtype, copy=False), mcfg.dec_patch)
    target = np.take_along_axis(patches, flats[..., None], axis=1)

    for p in params.values():
        p.zero_grad()
    with dc.track_peak() as whole:
        z = tokenize(batch, params, mcfg)
        zl = z.detached(requires_grad=True)
        with dc.track_peak() as dec:
            pred = decode_coords(zl, coords, params, mcfg)
            l2 = loss_l2(pred, target)
            loss = l2
            perc_val = 0.0
            if perceptual_weight or phase == "finetune":
                frames = frames_from_patches(pred, n_frames, grid, mcfg)
                tframes = frames_from_patches(Tensor(target), n_frames, grid, mcfg).data
                perc = perceptual_proxy_loss(frames, tframes)
                perc_val = perc.item()
                if perceptual_weight:
                    loss = loss + perc * perceptual_weight
                del frames, perc
            loss_val, l2_val = loss.item(), l2.item()
            if not np.isfinite(loss_val):
                raise DivergenceError(state.step, loss_val)
            dc.backward(loss)
            del pred, l2, loss
        dc.backward(list(z.planes), [p.grad for p in zl.planes])
        del z, zl
    if update:
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        dc.adamw_step(params, grads, state.opt)
        for p in params.values():
            p.zero_grad()
        state.step += 1
        state.last_loss = loss_val
        state.loss_ema = loss_val if state.loss_ema is None else 0.98 * state.loss_ema + 0.02 * loss_val
    return StepResult(step=state.step, phase=phase, loss=loss_val, l2=l2_val, perceptual=perc_val,
                      peak_elems=whole["peak"], dec_peak_elems=dec["peak"],
                      ms=(time.perf_counter() - t0) * 1e3)


def train_step_main(batch, params: Params, state: TrainState, tcfg: TrainConfig, mcfg: ModelConfig,
                    update: bool = True) -> StepResult:
    """One main-phase step: l2 on sampled patches only (random patches by
    default, whole random frames when ``tcfg.sampler == "frame"``)."""
    if tcfg.phase != "main":
        raise ContractError("train_step_main requires phase='main'")
    batch = np.asarray(batch)
    B = batch.shape[0] if batch.ndim == 5 else 1
    grid = DecoderGrid.of(mcfg)
    if tcfg.sampler == "patch":
        coords, flats = _sample(tcfg, state, grid, B, "patch", tcfg.num_coords)
        n_frames = 0
    else:
        coords, flats = _sample(tcfg, state, grid, B, "frame", tcfg.n_frames)
        n_frames = tcfg.n_frames
    return _run_step(batch, params, state, mcfg, coords, flats, "main", n_frames=n_frames, update=update)


def train_step_finetune(batch, params: Params, state: TrainState, tcfg: TrainConfig, mcfg: ModelConfig,
                        update: bool = True) -> StepResult:
    """One fine-tune step over all patches of ``n_frames`` random temporal
    slices with loss l2 + perceptual_weight * edge proxy."""
    if tcfg.phase != "finetune":
        raise ContractError("train_step_finetune requires phase='finetune'")
    batch = np.asarray(batch)
    B = batch.shape[0] if batch.ndim == 5 else 1
    grid = DecoderGrid.of(mcfg)
    coords, flats = _sample(tcfg, state, grid, B, "frame", tcfg.n_frames)
    return _run_step(batch, params, state, mcfg, coords, flats, "finetune",
                     perceptual_weight=tcfg.perceptual_weight, n_frames=tcfg.n_frames, update=update)


def full_frame_step(batch, params: Params, state: TrainState, mcfg: ModelConfig, update: bool = False) -> StepResult:
    """A step that decodes every patch (N = M), the conventional
    whole-video reconstruction objective."""
    batch = np.asarray(batch)
    B = batch.shape[0] if batch.ndim == 5 else 1
    grid = DecoderGrid.of(mcfg)
    flat = np.arange(grid.M)
    from .model import all_patch_coords
    coords = np.broadcast_to(all_patch_coords(grid.shape), (B, grid.M, 3))
    return _run_step(batch, params, state, mcfg, coords, np.broadcast_to(flat, (B, grid.M)), "main",
                     update=update)


def step_fn(tcfg: TrainConfig) -> Callable:
    return train_step_main if tcfg.phase == "main" else train_step_finetune


def batches(corpus: Sequence[np.ndarray], seed: int, start: int, batch_size: int, clip_len: int) -> Iterator[np.ndarray]:
    from .data import make_batch
    step = start
    while True:
        yield make_batch(corpus, make_rng(seed, step, STREAM_BATCH), batch_size, clip_len)
        step += 1


def fit(corpus: Sequence[np.ndarray], params: Params, state: TrainState, tcfg: TrainConfig, mcfg: ModelConfig,
        steps: int | None = None, on_step: Callable[[StepResult], None] | None = None) -> list[StepResult]:
    """Run ``steps`` optimiser steps (default ``tcfg.steps``) from ``state``.

    Batch composition depends only on (seed, step), so a resumed state
    continues the exact sequence.
    """
    fn = step_fn(tcfg)
    n = tcfg.steps if steps is None else steps
    out = []
    it = batches(corpus, state.seed, state.step, tcfg.batch_size, mcfg.frames)
    for _ in range(n):
        res = fn(next(it), params, state, tcfg, mcfg)
        out.append(res)
        if on_step is not None:
            on_step(res)
    return out


def heldout_l2(corpus: Sequence[np.ndarray], params: Params, mcfg: ModelConfig) -> float:
    """Mean full-reconstruction l2 over ``corpus`` clips."""
    from .model import reconstruct_full
    errs = []
    for v in corpus:
        with dc.no_grad():
            z = tokenize(v, params, mcfg)
        rec = reconstruct_full(z, params, mcfg)[0]
        errs.append(float(np.mean((rec.astype(np.float64) - v) ** 2)))
    return float(np.mean(errs))
