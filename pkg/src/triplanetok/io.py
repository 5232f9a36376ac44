"""Binary formats: CVID videos, CTCK checkpoints and CTOK token files.

All integers are little-endian. Every reader validates lengths before it
allocates, so damaged files surface as a :class:`FormatError` subclass and
never as a crash or an oversized allocation.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Any

import numpy as np

from .config import ConfigError, ModelConfig, TrainConfig
from .diffcore import Tensor
from .model import Params, Triplane, param_shapes

CVID_MAGIC = b"CVID"
CTCK_MAGIC = b"CTCK"
CTOK_MAGIC = b"CTOK"
CVID_VERSION = 1
CTCK_VERSION = 1
CTOK_VERSION = 1
FORMAT_VERSIONS = {"cvid": CVID_VERSION, "ctck": CTCK_VERSION, "ctok": CTOK_VERSION}

DTYPE_F32 = 0
OPT_PREFIXES = ("opt.m.", "opt.v.")


class FormatError(ValueError):
    """Base class for malformed or inconsistent files."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass


class ConfigBlobError(FormatError):
    pass


class UnknownTensorError(FormatError):
    pass


class MissingTensorError(FormatError):
    pass


class DuplicateTensorError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class DimMismatchError(FormatError):
    pass


class UnsupportedDtypeError(FormatError):
    pass


# ---------------------------------------------------------------------------
# low-level helpers


def atomic_write(path: str, data: bytes) -> None:
    """Write ``data`` to a sibling temp file and rename it over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int, field: str) -> memoryview:
        if n > self.remaining:
            raise TruncatedError(f"{self.what}: truncated while reading {field} "
                                 f"(need {n} bytes, {self.remaining} left)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, field: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))

    def u8(self, field: str) -> int:
        return self.unpack("<B", field)[0]

    def u16(self, field: str) -> int:
        return self.unpack("<H", field)[0]

    def u32(self, field: str) -> int:
        return self.unpack("<I", field)[0]

    def f32_array(self, shape: tuple[int, ...], field: str) -> np.ndarray:
        n = int(np.prod(shape, dtype=object)) if shape else 1
        raw = self.take(4 * n, field)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)

    def magic(self, expected: bytes) -> None:
        got = bytes(self.take(4, "magic"))
        if got != expected:
            raise BadMagicError(f"{self.what}: bad magic {got!r}, expected {expected!r}")

    def version(self, expected: int) -> None:
        v = self.u32("version")
        if v != expected:
            raise VersionError(f"{self.what}: unsupported version {v} (expected {expected})")

    def finish(self) -> None:
        if self.remaining:
            raise TrailingDataError(f"{self.what}: {self.remaining} unexpected trailing bytes")


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _u32(*xs: int) -> bytes:
    return struct.pack(f"<{len(xs)}I", *xs)


# ---------------------------------------------------------------------------
# CVID


def quantize(video) -> np.ndarray:
    """[0, 1] floats to u8 with pixel = round(value * 255)."""
    v = np.clip(np.asarray(video, dtype=np.float64), 0.0, 1.0)
    return np.rint(v * 255.0).astype(np.uint8)


def encode_cvid(video) -> bytes:
    v = np.asarray(video)
    if v.ndim != 4:
        raise ValueError(f"expected a [T, H, W, C] video, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("video contains non-finite values")
    q = quantize(v)
    return CVID_MAGIC + _u32(CVID_VERSION, *q.shape) + q.tobytes()


def decode_cvid(buf: bytes) -> np.ndarray:
    r = _Reader(buf, "CVID")
    r.magic(CVID_MAGIC)
    r.version(CVID_VERSION)
    shape = r.unpack("<4I", "dimensions")
    n = int(np.prod(shape, dtype=object))
    raw = r.take(n, "pixel payload")
    r.finish()
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape).astype(np.float32) / np.float32(255.0)


def write_cvid(path, video) -> None:
    atomic_write(path, encode_cvid(video))


def read_cvid(path) -> np.ndarray:
    """Read a CVID file as float32 [T, H, W, C] in [0, 1]."""
    return decode_cvid(_read_bytes(path))


# ---------------------------------------------------------------------------
# CTOK


def _plane_arrays(z: Triplane) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    planes = []
    for p in z.planes:
        a = p.data if isinstance(p, Tensor) else np.asarray(p)
        if a.ndim == 4:
            if a.shape[0] != 1:
                raise ValueError(f"a token file holds one clip; got batch {a.shape[0]}")
            a = a[0]
        planes.append(a)
    return tuple(planes)


def encode_tokens(z: Triplane) -> bytes:
    xy, yt, xt = _plane_arrays(z)
    h, w, d = xy.shape
    t = yt.shape[1]
    if yt.shape != (w, t, d) or xt.shape != (h, t, d):
        raise ValueError(f"inconsistent plane shapes {xy.shape}, {yt.shape}, {xt.shape}")
    return CTOK_MAGIC + _u32(CTOK_VERSION, h, w, t, d) + _f32_bytes(xy) + _f32_bytes(yt) + _f32_bytes(xt)


def decode_tokens(buf: bytes, cfg: ModelConfig | None = None) -> Triplane:
    r = _Reader(buf, "CTOK")
    r.magic(CTOK_MAGIC)
    r.version(CTOK_VERSION)
    h, w, t, d = r.unpack("<4I", "dimensions")
    if cfg is not None:
        want = (cfg.plane_h, cfg.plane_w, cfg.plane_t, cfg.latent_dim)
        if (h, w, t, d) != want:
            raise DimMismatchError(f"token dims (H', W', T', D_z) = {(h, w, t, d)} do not match config {want}")
    xy = r.f32_array((h, w, d), "xy plane payload")
    yt = r.f32_array((w, t, d), "yt plane payload")
    xt = r.f32_array((h, t, d), "xt plane payload")
    r.finish()
    return Triplane(Tensor(xy[None]), Tensor(yt[None]), Tensor(xt[None]))


def token_payload_bytes(h: int, w: int, t: int, d: int) -> int:
    return (h * w + w * t + h * t) * d * 4


def write_tokens(path, z: Triplane) -> None:
    atomic_write(path, encode_tokens(z))


def read_tokens(path, cfg: ModelConfig | None = None) -> Triplane:
    """Read a CTOK file into a batch-1 float32 :class:`Triplane`; with
    ``cfg`` the plane dims must match it."""
    return decode_tokens(_read_bytes(path), cfg)


# ---------------------------------------------------------------------------
# CTCK


@dataclass
class Checkpoint:
    params: Params
    model: ModelConfig
    train: TrainConfig | None = None
    state_meta: dict | None = None
    opt_m: dict[str, np.ndarray] | None = None
    opt_v: dict[str, np.ndarray] | None = None
    extra: dict | None = None

    def train_state(self):
        """Rebuild the saved training state, or ``None`` if none was saved."""
        if self.state_meta is None:
            return None
        from .train import TrainState
        return TrainState.from_meta(self.state_meta, self.opt_m or {}, self.opt_v or {})


def encode_checkpoint(params: Params, model: ModelConfig, train: TrainConfig | None = None,
                      state=None, extra: dict | None = None) -> bytes:
    shapes = param_shapes(model)
    missing = [k for k in shapes if k not in params]
    if missing:
        raise MissingTensorError(f"parameter {missing[0]!r} missing ({len(missing)} total)")
    for k in params:
        if k not in shapes:
            raise UnknownTensorError(f"parameter {k!r} is not part of the model")
        if tuple(params[k].shape) != shapes[k]:
            raise ShapeMismatchError(f"parameter {k!r} has shape {params[k].shape}, config expects {shapes[k]}")
    blob: dict[str, Any] = {"model": model.to_dict()}
    if train is not None:
        blob["train"] = train.to_dict()
    tensors: list[tuple[str, np.ndarray]] = [(k, params[k].data) for k in shapes]
    if state is not None:
        blob["state"] = state.meta()
        for k in shapes:
            if k in state.opt.m:
                tensors.append(("opt.m." + k, state.opt.m[k]))
                tensors.append(("opt.v." + k, state.opt.v[k]))
    if extra:
        blob["extra"] = extra
    cfg_bytes = json.dumps(blob, sort_keys=True).encode("utf-8")
    parts = [CTCK_MAGIC, _u32(CTCK_VERSION, len(cfg_bytes)), cfg_bytes, _u32(len(tensors))]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(_u32(*arr.shape) + _f32_bytes(arr))
    return b"".join(parts)


def decode_checkpoint(buf: bytes, cfg: ModelConfig | None = None) -> Checkpoint:
    r = _Reader(buf, "CTCK")
    r.magic(CTCK_MAGIC)
    r.version(CTCK_VERSION)
    n = r.u32("config length")
    raw = bytes(r.take(n, "config blob"))
    try:
        blob = json.loads(raw.decode("utf-8"))
        if not isinstance(blob, dict) or not isinstance(blob.get("model"), dict):
            raise ConfigBlobError("CTCK: config blob has no model section")
        stored = ModelConfig.from_dict(blob["model"])
        train = TrainConfig.from_dict(blob["train"]) if isinstance(blob.get("train"), dict) else None
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError, TypeError, KeyError, ValueError) as e:
        if isinstance(e, ConfigBlobError):
            raise
        raise ConfigBlobError(f"CTCK: unreadable config blob ({e})") from None
    model = cfg if cfg is not None else stored
    shapes = param_shapes(model)

    count = r.u32("tensor count")
    params: Params = {}
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    for i in range(count):
        ln = r.u16(f"tensor {i} name length")
        try:
            name = bytes(r.take(ln, f"tensor {i} name")).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"CTCK: tensor {i} name is not valid UTF-8") from None
        dtype, rank = r.unpack("<BB", f"tensor {name!r} dtype/rank")
        if dtype != DTYPE_F32:
            raise UnsupportedDtypeError(f"CTCK: tensor {name!r} has dtype code {dtype}")
        dims = r.unpack(f"<{rank}I", f"tensor {name!r} dims") if rank else ()
        base, store = name, params
        for pre, d in zip(OPT_PREFIXES, (opt_m, opt_v)):
            if name.startswith(pre):
                base, store = name[len(pre):], d
        if base not in shapes:
            raise UnknownTensorError(f"CTCK: unknown tensor {name!r}")
        if tuple(dims) != shapes[base]:
            raise ShapeMismatchError(f"CTCK: tensor {name!r} has shape {tuple(dims)}, config expects {shapes[base]}")
        key = base
        if key in store:
            raise DuplicateTensorError(f"CTCK: tensor {name!r} appears more than once")
        arr = r.f32_array(tuple(dims), f"tensor {name!r} payload")
        store[key] = arr
    r.finish()
    for k in shapes:
        if k not in params:
            raise MissingTensorError(f"CTCK: parameter {k!r} missing")
    if set(opt_m) != set(opt_v):
        raise MissingTensorError("CTCK: optimiser first/second moments do not cover the same parameters")
    out = {k: Tensor(params[k], requires_grad=True, name=k) for k in shapes}
    return Checkpoint(params=out, model=model, train=train, state_meta=blob.get("state"),
                      opt_m=opt_m, opt_v=opt_v, extra=blob.get("extra"))


def save_checkpoint(path, params: Params, model: ModelConfig, train: TrainConfig | None = None,
                    state=None, extra: dict | None = None) -> None:
    """Write parameters (float32), configs and, optionally, the training
    state including AdamW moments."""
    atomic_write(path, encode_checkpoint(params, model, train, state, extra))


def load_checkpoint(path, cfg: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint. Shapes are validated against ``cfg`` when given,
    otherwise against the stored model config."""
    return decode_checkpoint(_read_bytes(path), cfg)
