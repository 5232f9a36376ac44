"""Minimal reverse-mode differentiation over numpy arrays."""
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    as_tensor,
    backward,
    grad_enabled,
    live_elements,
    no_grad,
    peak_live_elements,
    reset_peak,
    set_instrumentation,
    track_peak,
)
from .ops import (
    DimensionError,
    add,
    concat,
    gelu,
    getitem,
    layer_norm,
    linear,
    matmul,
    mean,
    mse,
    mul,
    multi_head_attention,
    pad_edge,
    reshape,
    softmax,
    sub,
    swapaxes,
    transpose,
)
from .ops import sum as sum_  # noqa: F401
from .interp import CoordinateError, bilinear_sample, cell_and_weights
from .optim import AdamW, AdamWState, NonFiniteGradientError, adamw_step
from .gradcheck import grad_check, numeric_grad
from ._backend import backend_name  # noqa: E402
