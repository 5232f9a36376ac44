"""Triplane video tokenizer with coordinate-sampled training, built on a
small numpy autodiff core."""
from .config import ConfigError, ModelConfig, TrainConfig, preset
from .model import Triplane, init_params, reconstruct_full, tokenize

__version__ = "0.1.0"

__all__ = ["ConfigError", "ModelConfig", "TrainConfig", "Triplane", "init_params", "preset",
           "reconstruct_full", "tokenize", "__version__"]
