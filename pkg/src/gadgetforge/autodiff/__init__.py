"""Minimal reverse-mode automatic differentiation over dense float64 arrays."""
from .gradcheck import grad_check
from .ops import (
    add,
    bce_clamp_events,
    bce_loss,
    concat,
    conv1d,
    dropout,
    gather,
    matmul,
    mul,
    pad_axis,
    reduce_mean,
    reduce_sum,
    reset_bce_clamp_events,
    reshape,
    sigmoid,
    slice_,
    softmax,
    sub,
    tanh,
    transpose,
)
from .optim import Adam, AdaMax
from .tensor import Tape, TapeNode, Tensor, as_tensor, backward, current_tape, make_op, no_grad

__all__ = [
    "Adam",
    "AdaMax",
    "Tape",
    "TapeNode",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "bce_clamp_events",
    "bce_loss",
    "concat",
    "conv1d",
    "current_tape",
    "dropout",
    "gather",
    "grad_check",
    "make_op",
    "matmul",
    "mul",
    "no_grad",
    "pad_axis",
    "reduce_mean",
    "reduce_sum",
    "reset_bce_clamp_events",
    "reshape",
    "sigmoid",
    "slice_",
    "softmax",
    "sub",
    "tanh",
    "transpose",
]
