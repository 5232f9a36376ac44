"""Shared fixtures for tests: a micro model config and randomised weights."""
import numpy as np

from triplanetok.config import ModelConfig, PatchSpec
from triplanetok.diffcore import Tensor
from triplanetok.model import init_params

MICRO = ModelConfig(
    frames=4, height=8, width=8,
    enc_patch=PatchSpec(2, 4, 4), dec_patch=PatchSpec(2, 4, 4),
    enc_layers=1, enc_dim=8, enc_heads=2,
    cs_layers=1, cs_dim=8, cs_heads=2,
    dec_layers=1, dec_dim=8, dec_heads=2,
    plane_h=2, plane_w=2, plane_t=2, latent_dim=2, mlp_ratio=2,
)


def random_params(cfg: ModelConfig, seed: int, dtype=np.float64, scale: float = 0.3):
    """Default init with every tensor (including the zero output
    projection) perturbed so all gradient paths are live."""
    params = init_params(cfg, seed, dtype)
    rng = np.random.default_rng(seed + 99)
    for p in params.values():
        p.data = (p.data + scale * rng.standard_normal(p.shape)).astype(dtype)
    return params


def leaf(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=True)
