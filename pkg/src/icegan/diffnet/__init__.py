"""Minimal reverse-mode autodiff and the layers used by the diagnosis models."""

from .tensor import (
    Tensor,
    constant,
    parameter,
    gradients,
    add,
    sub,
    mul,
    scale,
    add_scalar,
    rsub_scalar,
    neg,
    cast,
    log,
    clip,
    mean,
    tsum,
    reshape,
    flatten_batch,
    take_rows,
    stack_rows,
    select_columns,
    mean_row_l2,
    mmd2_rbf_op,
    PROB_EPS,
)
from .layers import (
    Layer,
    Stack,
    Conv1d,
    ConvTranspose1d,
    Conv2d,
    Linear,
    BatchNorm,
    LeakyReLU,
    Tanh,
    Sigmoid,
    Softmax,
    ShapeError,
)
from .optim import Adam, TrainingDiverged
from .gradcheck import max_relative_error

__all__ = [
    "Tensor", "constant", "parameter", "gradients",
    "add", "sub", "mul", "scale", "add_scalar", "rsub_scalar", "neg", "cast", "log",
    "clip", "mean", "tsum", "reshape", "flatten_batch", "take_rows",
    "stack_rows", "select_columns", "mean_row_l2", "mmd2_rbf_op", "PROB_EPS",
    "Layer", "Stack", "Conv1d", "ConvTranspose1d", "Conv2d", "Linear",
    "BatchNorm", "LeakyReLU", "Tanh", "Sigmoid", "Softmax", "ShapeError",
    "Adam", "TrainingDiverged", "max_relative_error",
]
