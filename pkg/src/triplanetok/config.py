"""Architecture and training configuration with named presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, asdict
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PatchSpec:
    pt: int
    ph: int
    pw: int

    def __post_init__(self):
        if min(self.pt, self.ph, self.pw) < 1:
            raise ConfigError(f"patch extents must be positive, got {self}")

    @property
    def volume(self) -> int:
        return self.pt * self.ph * self.pw

    def grid(self, frames: int, height: int, width: int) -> tuple[int, int, int]:
        for axis, n, p in (("time", frames, self.pt), ("height", height, self.ph), ("width", width, self.pw)):
            if n % p:
                raise ConfigError(f"patch extent {p} does not divide {axis} extent {n}")
        return frames // self.pt, height // self.ph, width // self.pw


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 16
    height: int = 32
    width: int = 32
    channels: int = 3
    enc_patch: PatchSpec = PatchSpec(2, 4, 4)
    dec_patch: PatchSpec = PatchSpec(2, 4, 4)
    enc_layers: int = 2
    enc_dim: int = 64
    enc_heads: int = 4
    cs_layers: int = 2
    cs_dim: int = 64
    cs_heads: int = 4
    dec_layers: int = 4
    dec_dim: int = 64
    dec_heads: int = 4
    plane_h: int = 8
    plane_w: int = 8
    plane_t: int = 8
    latent_dim: int = 8
    split_factor: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        for k in ("frames", "height", "width", "channels", "enc_layers", "enc_dim", "enc_heads",
                  "cs_layers", "cs_dim", "cs_heads", "dec_layers", "dec_dim", "dec_heads",
                  "plane_h", "plane_w", "plane_t", "latent_dim", "split_factor", "mlp_ratio"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        for part in ("enc", "cs", "dec"):
            d, h = getattr(self, f"{part}_dim"), getattr(self, f"{part}_heads")
            if d % h:
                raise ConfigError(f"{part}_dim {d} not divisible by {part}_heads {h}")
        for name, n in self.plane_sizes.items():
            if n % self.split_factor:
                raise ConfigError(f"plane {name} with {n} cells cannot be split into {self.split_factor} equal chunks")
        self.enc_grid
        self.dec_grid

    @property
    def enc_grid(self) -> tuple[int, int, int]:
        return self.enc_patch.grid(self.frames, self.height, self.width)

    @property
    def dec_grid(self) -> tuple[int, int, int]:
        return self.dec_patch.grid(self.frames, self.height, self.width)

    @property
    def num_enc_patches(self) -> int:
        gt, gh, gw = self.enc_grid
        return gt * gh * gw

    @property
    def num_dec_patches(self) -> int:
        gt, gh, gw = self.dec_grid
        return gt * gh * gw

    @property
    def plane_sizes(self) -> dict[str, int]:
        return {"xy": self.plane_h * self.plane_w,
                "yt": self.plane_w * self.plane_t,
                "xt": self.plane_h * self.plane_t}

    @property
    def plane_shapes(self) -> dict[str, tuple[int, int]]:
        return {"xy": (self.plane_h, self.plane_w),
                "yt": (self.plane_w, self.plane_t),
                "xt": (self.plane_h, self.plane_t)}

    @property
    def token_count(self) -> int:
        return sum(self.plane_sizes.values())

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        for k in ("enc_patch", "dec_patch"):
            if k in d and not isinstance(d[k], PatchSpec):
                v = d[k]
                d[k] = PatchSpec(**v) if isinstance(v, dict) else PatchSpec(*v)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _full_scale(layers: tuple[int, int, int], dim: int, heads: int) -> ModelConfig:
    return ModelConfig(
        frames=128, height=128, width=128,
        enc_patch=PatchSpec(4, 8, 8), dec_patch=PatchSpec(1, 8, 8),
        enc_layers=layers[0], enc_dim=dim, enc_heads=heads,
        cs_layers=layers[1], cs_dim=dim, cs_heads=heads,
        dec_layers=layers[2], dec_dim=dim, dec_heads=heads,
        plane_h=16, plane_w=16, plane_t=32, latent_dim=8,
    )


PRESETS: dict[str, ModelConfig] = {
    "tiny": ModelConfig(),
    "S": _full_scale((8, 8, 8), 512, 8),
    "B": _full_scale((8, 12, 12), 768, 12),
    "L": _full_scale((8, 24, 24), 1024, 16),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return base.replace(**overrides) if overrides else base


@dataclass
class TrainConfig:
    phase: str = "main"
    batch_size: int = 8
    steps: int = 2000
    num_coords: int = 64
    n_frames: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001
    perceptual_weight: float = 1.0
    sampler: str = "patch"
    seed: int = 0
    deterministic: bool = True
    log_every: int = 1

    def __post_init__(self):
        if self.phase not in ("main", "finetune"):
            raise ConfigError(f"phase must be 'main' or 'finetune', got {self.phase!r}")
        if self.sampler not in ("patch", "frame"):
            raise ConfigError(f"sampler must be 'patch' or 'frame', got {self.sampler!r}")
        for k in ("batch_size", "steps", "num_coords", "n_frames"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        if self.lr < 0 or self.weight_decay < 0 or self.perceptual_weight < 0:
            raise ConfigError("lr, weight_decay and perceptual_weight must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def dumps(model: ModelConfig, train: TrainConfig | None = None, **extra) -> str:
    blob: dict[str, Any] = {"model": model.to_dict()}
    if train is not None:
        blob["train"] = train.to_dict()
    blob.update(extra)
    return json.dumps(blob, sort_keys=True)
