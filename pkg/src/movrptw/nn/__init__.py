"""Minimal tensor math with reverse-mode differentiation for the policy network."""

from .autodiff import (
    MaskError,
    Tape,
    Tensor,
    add,
    add_const,
    as_tensor,
    batch_norm,
    concat,
    gather_cols,
    gather_nodes,
    linear,
    log,
    masked_softmax,
    matmul,
    mean,
    mul,
    permute,
    relu,
    reshape,
    scale,
    softmax,
    sum_,
    tanh,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .params import GradientError, ParamStore, uniform_init

__all__ = [
    "MaskError", "Tape", "Tensor", "add", "add_const", "as_tensor", "batch_norm",
    "concat", "gather_cols", "gather_nodes", "linear", "log", "masked_softmax",
    "matmul", "mean", "mul", "permute", "relu", "reshape", "scale", "softmax",
    "sum_", "tanh", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "GradCheckReport", "grad_check", "GradientError", "ParamStore", "uniform_init",
]
