"""A small reverse-mode automatic differentiation engine on numpy float64 arrays."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check, relative_error
from .ops import (
    BatchNormState,
    add,
    batch_norm,
    concat,
    cross_entropy_loss,
    layer_norm,
    linear,
    matmul,
    max_pool,
    mean_pool,
    mse_loss,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    total,
    transpose,
)
from .optim import AdamState, adam_step, glorot_uniform
from .tensor import EngineFault, ShapeError, Tape, Tensor, active_tape, parameter

__all__ = [
    "AdamState",
    "BatchNormState",
    "Checkpoint",
    "CheckpointError",
    "EngineFault",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "batch_norm",
    "concat",
    "cross_entropy_loss",
    "finite_diff_check",
    "glorot_uniform",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "matmul",
    "max_pool",
    "mean_pool",
    "mse_loss",
    "parameter",
    "relative_error",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "softmax",
    "sub",
    "total",
    "transpose",
]
