"""Triplane video tokenizer: patch encoder, cross-self triplane encoder and a
coordinate-queried transformer decoder.

Videos are float arrays shaped [T, H, W, C] (or [B, T, H, W, C]) in [0, 1].
Coordinates are [..., 3] arrays of (i, j, k) = (height, width, time) patch
centres in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import diffcore as dc
from .config import ModelConfig, PatchSpec
from .diffcore import Tensor

Params = dict[str, Tensor]
PLANES = ("xy", "yt", "xt")


# ---------------------------------------------------------------------------
# patches


def patchify(video: np.ndarray, spec: PatchSpec) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Split [.., T, H, W, C] into [.., M, pt*ph*pw*C] rows in (t, h, w) order."""
    video = np.asarray(video)
    *lead, T, H, W, C = video.shape
    gt, gh, gw = spec.grid(T, H, W)
    v = video.reshape(*lead, gt, spec.pt, gh, spec.ph, gw, spec.pw, C)
    n = len(lead)
    axes = tuple(range(n)) + tuple(n + a for a in (0, 2, 4, 1, 3, 5, 6))
    v = v.transpose(axes)
    return np.ascontiguousarray(v).reshape(*lead, gt * gh * gw, spec.volume * C), (gt, gh, gw)


def unpatchify(patches: np.ndarray, grid: tuple[int, int, int], spec: PatchSpec, channels: int = 3) -> np.ndarray:
    patches = np.asarray(patches)
    gt, gh, gw = grid
    *lead, M, P = patches.shape
    if M != gt * gh * gw or P != spec.volume * channels:
        raise ValueError(f"patch matrix {patches.shape} does not match grid {grid} and patch {spec}")
    v = patches.reshape(*lead, gt, gh, gw, spec.pt, spec.ph, spec.pw, channels)
    n = len(lead)
    axes = tuple(range(n)) + tuple(n + a for a in (0, 3, 1, 4, 2, 5, 6))
    v = v.transpose(axes)
    return np.ascontiguousarray(v).reshape(*lead, gt * spec.pt, gh * spec.ph, gw * spec.pw, channels)


# ---------------------------------------------------------------------------
# parameters


def _trunc_normal(rng: np.random.Generator, shape, std=0.02) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


class _Init:
    """Parameter builder. With ``shapes_only`` it records shapes without
    drawing or allocating anything."""

    def __init__(self, seed: int, dtype, shapes_only: bool = False):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.shapes_only = shapes_only
        self.params: Params = {}
        self.shapes: dict[str, tuple[int, ...]] = {}

    def add(self, name: str, shape, kind: str = "normal") -> None:
        shape = tuple(int(n) for n in shape)
        self.shapes[name] = shape
        if self.shapes_only:
            return
        if kind == "normal":
            arr = _trunc_normal(self.rng, shape)
        elif kind == "ones":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        self.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True, name=name)

    def dense(self, name: str, din: int, dout: int, zero: bool = False) -> None:
        self.add(f"{name}.w", (din, dout), "zeros" if zero else "normal")
        self.add(f"{name}.b", (dout,), "zeros")

    def norm(self, name: str, d: int) -> None:
        self.add(f"{name}.g", (d,), "ones")
        self.add(f"{name}.b", (d,), "zeros")

    def attn(self, name: str, d: int) -> None:
        for p in ("q", "k", "v", "o"):
            self.dense(f"{name}.{p}", d, d)

    def mlp(self, name: str, d: int, ratio: int) -> None:
        self.dense(f"{name}.fc1", d, d * ratio)
        self.dense(f"{name}.fc2", d * ratio, d)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Fresh parameters: truncated normal (std 0.02) projections and
    embeddings, unit/zero norms, zero final pixel projection."""
    return _build(cfg, _Init(seed, dtype)).params


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes, in creation order."""
    return _build(cfg, _Init(0, np.float32, shapes_only=True)).shapes


def _build(cfg: ModelConfig, it: _Init) -> _Init:
    C = cfg.channels
    De, Dc, Dd = cfg.enc_dim, cfg.cs_dim, cfg.dec_dim

    it.dense("enc.patch", cfg.enc_patch.volume * C, De)
    it.add("enc.pos", (cfg.num_enc_patches, De))
    for i in range(cfg.enc_layers):
        p = f"enc.blocks.{i}"
        it.norm(f"{p}.ln1", De)
        it.attn(f"{p}.attn", De)
        it.norm(f"{p}.ln2", De)
        it.mlp(f"{p}.mlp", De, cfg.mlp_ratio)

    it.dense("cs.in", De, Dc)
    for name, n in cfg.plane_sizes.items():
        it.add(f"cs.z0.{name}", (n, Dc))
    for i in range(cfg.cs_layers):
        p = f"cs.blocks.{i}"
        it.norm(f"{p}.ln_q", Dc)
        it.norm(f"{p}.ln_kv", Dc)
        it.attn(f"{p}.xattn", Dc)
        it.norm(f"{p}.ln_s", Dc)
        it.attn(f"{p}.sattn", Dc)
        it.norm(f"{p}.ln_m", Dc)
        it.mlp(f"{p}.mlp", Dc, cfg.mlp_ratio)
    it.norm("cs.ln_out", Dc)
    for name in PLANES:
        it.dense(f"cs.out.{name}", Dc, cfg.latent_dim)

    gt, gh, gw = cfg.dec_grid
    it.dense("dec.embed", 3 * cfg.latent_dim, Dd)
    for axis, n in (("i", gh), ("j", gw), ("k", gt)):
        it.add(f"dec.pos.{axis}", (n, Dd))
    for i in range(cfg.dec_layers):
        p = f"dec.blocks.{i}"
        it.norm(f"{p}.ln1", Dd)
        it.attn(f"{p}.attn", Dd)
        it.norm(f"{p}.ln2", Dd)
        it.mlp(f"{p}.mlp", Dd, cfg.mlp_ratio)
    it.norm("dec.ln_out", Dd)
    it.dense("dec.out", Dd, cfg.dec_patch.volume * C, zero=True)
    return it


def cast_params(params: Params, dtype) -> Params:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in params.items()}


def param_count(params: Params) -> int:
    return sum(p.size for p in params.values())


# ---------------------------------------------------------------------------
# building blocks


def _dense(params: Params, name: str, x: Tensor) -> Tensor:
    return dc.linear(x, params[f"{name}.w"], params[f"{name}.b"])


def _norm(params: Params, name: str, x: Tensor) -> Tensor:
    return dc.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def _attention(params: Params, name: str, xq: Tensor, xkv: Tensor, heads: int) -> Tensor:
    q = _dense(params, f"{name}.q", xq)
    k = _dense(params, f"{name}.k", xkv)
    v = _dense(params, f"{name}.v", xkv)
    return _dense(params, f"{name}.o", dc.multi_head_attention(q, k, v, heads))


def _mlp(params: Params, name: str, x: Tensor) -> Tensor:
    return _dense(params, f"{name}.fc2", dc.gelu(_dense(params, f"{name}.fc1", x)))


def _self_block(params: Params, p: str, x: Tensor, heads: int) -> Tensor:
    h = _norm(params, f"{p}.ln1", x)
    x = x + _attention(params, f"{p}.attn", h, h, heads)
    return x + _mlp(params, f"{p}.mlp", _norm(params, f"{p}.ln2", x))


# ---------------------------------------------------------------------------
# encoder


def encode_features(patches, params: Params, cfg: ModelConfig) -> Tensor:
    """Embed [B, M, P] patch rows, add positional embeddings and run the
    transformer encoder. Returns video features [B, M, enc_dim]."""
    patches = dc.as_tensor(patches)
    if patches.ndim == 2:
        patches = dc.reshape(patches, (1,) + patches.shape)
    pos = params["enc.pos"]
    if patches.shape[1] != pos.shape[0]:
        raise ValueError(f"{patches.shape[1]} patches but positional table has {pos.shape[0]} rows")
    x = _dense(params, "enc.patch", patches) + pos
    for i in range(cfg.enc_layers):
        x = _self_block(params, f"enc.blocks.{i}", x, cfg.enc_heads)
    return x


@dataclass
class Triplane:
    """Factorised latent: xy [B, H', W', D], yt [B, W', T', D], xt [B, H', T', D]."""

    xy: Tensor
    yt: Tensor
    xt: Tensor

    @property
    def planes(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.xy, self.yt, self.xt

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(H', W', T', D_z)."""
        _, h, w, d = self.xy.shape
        return h, w, self.yt.shape[2], d

    @property
    def batch(self) -> int:
        return self.xy.shape[0]

    @property
    def token_count(self) -> int:
        h, w, t, _ = self.dims
        return h * w + w * t + h * t

    def numpy(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.xy.data, self.yt.data, self.xt.data

    def detached(self, requires_grad: bool = False) -> "Triplane":
        return Triplane(*(Tensor(p.data, requires_grad=requires_grad) for p in self.planes))

    def select(self, b: int) -> "Triplane":
        return Triplane(*(Tensor(p.data[b:b + 1]) for p in self.planes))


def chunk_order(cfg: ModelConfig) -> np.ndarray:
    """Token permutation taking the plane-major z0 sequence to the cross-self
    input: every plane is cut into ``split_factor`` contiguous chunks and the
    chunks are interleaved chunk-major (xy0, yt0, xt0, xy1, ...)."""
    sizes = [cfg.plane_sizes[n] for n in PLANES]
    offsets = np.cumsum([0] + sizes[:-1])
    s = cfg.split_factor
    parts = []
    for c in range(s):
        for off, n in zip(offsets, sizes):
            step = n // s
            parts.append(np.arange(off + c * step, off + (c + 1) * step))
    return np.concatenate(parts)


def encode_triplane(e: Tensor, params: Params, cfg: ModelConfig) -> Triplane:
    B = e.shape[0]
    heads = cfg.cs_heads
    kv = _dense(params, "cs.in", e)
    z0 = dc.concat([params[f"cs.z0.{n}"] for n in PLANES], axis=0)
    order = chunk_order(cfg)
    q = dc.getitem(z0, order)
    q = q + Tensor(np.zeros((B, 1, 1), dtype=q.dtype))
    for i in range(cfg.cs_layers):
        p = f"cs.blocks.{i}"
        ekv = _norm(params, f"{p}.ln_kv", kv)
        q = q + _attention(params, f"{p}.xattn", _norm(params, f"{p}.ln_q", q), ekv, heads)
        h = _norm(params, f"{p}.ln_s", q)
        q = q + _attention(params, f"{p}.sattn", h, h, heads)
        q = q + _mlp(params, f"{p}.mlp", _norm(params, f"{p}.ln_m", q))
    q = _norm(params, "cs.ln_out", q)
    q = dc.getitem(q, (slice(None), np.argsort(order)))
    planes = []
    off = 0
    for n in PLANES:
        size = cfg.plane_sizes[n]
        a, b = cfg.plane_shapes[n]
        chunk = dc.getitem(q, (slice(None), slice(off, off + size)))
        off += size
        planes.append(dc.reshape(_dense(params, f"cs.out.{n}", chunk), (B, a, b, cfg.latent_dim)))
    return Triplane(*planes)


def tokenize(video: np.ndarray, params: Params, cfg: ModelConfig) -> Triplane:
    """Video [T, H, W, C] or [B, T, H, W, C] to its triplane latent."""
    video = np.asarray(video)
    if video.ndim == 4:
        video = video[None]
    expect = (cfg.frames, cfg.height, cfg.width, cfg.channels)
    if video.shape[1:] != expect:
        raise ValueError(f"video shape {video.shape[1:]} does not match configured {expect}")
    dtype = params["enc.pos"].dtype
    patches, _ = patchify(video.astype(dtype, copy=False), cfg.enc_patch)
    # zero-centre pixels: with all-positive inputs the shared-mean gradient
    # imprints one direction on every patch-embedding column, and the
    # following layer norms then erase what distinguishes one clip from another
    patches = patches - dtype.type(0.5)
    return encode_triplane(encode_features(patches, params, cfg), params, cfg)


# ---------------------------------------------------------------------------
# decoder


def _batched_coords(coords, batch: int) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    if c.ndim == 2:
        c = np.broadcast_to(c, (batch,) + c.shape)
    if c.ndim != 3 or c.shape[-1] != 3 or c.shape[0] != batch:
        raise ValueError(f"coords must be [N, 3] or [{batch}, N, 3], got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise dc.CoordinateError("non-finite coordinate")
    if c.min() < 0.0 or c.max() > 1.0:
        raise dc.CoordinateError("coordinates must lie in [0, 1]")
    return c


def query_triplane(z: Triplane, coords) -> Tensor:
    """Coordinate representations [B, N, 3*D_z]: bilinear lookups of (i, j)
    in xy, (j, k) in yt and (i, k) in xt, concatenated."""
    c = _batched_coords(coords, z.batch)
    H, W, T, _ = z.dims
    i, j, k = c[..., 0], c[..., 1], c[..., 2]
    ui, uj, uk = i * (H - 1), j * (W - 1), k * (T - 1)
    return dc.concat([
        dc.bilinear_sample(z.xy, ui, uj),
        dc.bilinear_sample(z.yt, uj, uk),
        dc.bilinear_sample(z.xt, ui, uk),
    ], axis=-1)


def coord_embedding(coords: np.ndarray, params: Params) -> Tensor:
    """Sum of per-axis learnable tables linearly interpolated at (i, j, k)."""
    B, N, _ = coords.shape
    out = None
    for col, axis in enumerate(("i", "j", "k")):
        table = params[f"dec.pos.{axis}"]
        R, D = table.shape
        grid = dc.reshape(table, (R, 1, D))
        u = coords[..., col].reshape(-1) * (R - 1)
        e = dc.bilinear_sample(grid, u, np.zeros_like(u))
        e = dc.reshape(e, (B, N, D))
        out = e if out is None else out + e
    return out


def decode_patches(reps: Tensor, coords, params: Params, cfg: ModelConfig) -> Tensor:
    """Decoder: [B, N, 3*D_z] coordinate representations to [B, N, patch pixels]."""
    if reps.ndim == 2:
        reps = dc.reshape(reps, (1,) + reps.shape)
    B, N, d = reps.shape
    if d != 3 * cfg.latent_dim:
        raise ValueError(f"representation dim {d} != 3 * latent_dim ({3 * cfg.latent_dim})")
    if N < 1:
        raise ValueError("decoder needs at least one coordinate")
    c = _batched_coords(coords, B)
    x = _dense(params, "dec.embed", reps) + coord_embedding(c, params)
    for i in range(cfg.dec_layers):
        x = _self_block(params, f"dec.blocks.{i}", x, cfg.dec_heads)
    return _dense(params, "dec.out", _norm(params, "dec.ln_out", x))


def decode_coords(z: Triplane, coords, params: Params, cfg: ModelConfig) -> Tensor:
    return decode_patches(query_triplane(z, coords), coords, params, cfg)


def all_patch_coords(grid: tuple[int, int, int]) -> np.ndarray:
    """Centres of every patch of ``grid`` = (G_t, G_h, G_w) in patch order."""
    gt, gh, gw = grid
    t, h, w = np.meshgrid(np.arange(gt), np.arange(gh), np.arange(gw), indexing="ij")
    return np.stack([(h.ravel() + 0.5) / gh, (w.ravel() + 0.5) / gw, (t.ravel() + 0.5) / gt], axis=-1)


def reconstruct_full(z: Triplane, params: Params, cfg: ModelConfig, chunk: Union[int, str] = "all") -> np.ndarray:
    """Decode every patch centre and reassemble videos [B, T, H, W, C].

    With ``chunk="all"`` the decoder attends over all M patches at once;
    an integer chunk decodes independent attention sets of that size.
    """
    grid = cfg.dec_grid
    coords = all_patch_coords(grid)
    M = coords.shape[0]
    if M == 0:
        raise ValueError("empty decoder grid")
    step = M if chunk == "all" else int(chunk)
    if step < 1:
        raise ValueError("chunk must be positive or 'all'")
    with dc.no_grad():
        parts = [decode_coords(z, coords[s:s + step], params, cfg).data for s in range(0, M, step)]
    return unpatchify(np.concatenate(parts, axis=1), grid, cfg.dec_patch, cfg.channels)
