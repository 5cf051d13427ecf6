"""Deterministic float64 tensor engine with reverse-mode autodiff."""

from .gradcheck import finite_diff_grad, relative_error
from .ops import (
    add,
    add_rowwise,
    concat,
    conv3d,
    elementwise,
    exp,
    gelu,
    getitem,
    l2_normalize,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    softmax,
    square,
    stack,
    sub,
    sum,
    swap_last,
    transpose,
)
from .optim import AdamWState, adamw_step, cosine_lr
from .tensor import (
    ConfigError,
    ContractError,
    DimensionError,
    Tape,
    Tensor,
    backward,
    backward_fault,
    current_tape,
    fresh_tape,
    no_grad,
)

__all__ = [
    "AdamWState", "ConfigError", "ContractError", "DimensionError", "Tape", "Tensor",
    "adamw_step", "add", "add_rowwise", "backward", "backward_fault", "concat", "conv3d", "cosine_lr",
    "current_tape", "elementwise", "exp", "finite_diff_grad", "fresh_tape", "gelu",
    "getitem", "l2_normalize", "layer_norm", "linear", "log", "log_softmax", "matmul",
    "mean", "mul", "no_grad", "relative_error", "reshape", "scale", "softmax", "square",
    "stack", "sub", "sum", "swap_last", "transpose",
]
