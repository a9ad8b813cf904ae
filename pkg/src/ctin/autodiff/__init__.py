"""Minimal reverse-mode autodiff on numpy arrays."""

from .gradcheck import GradCheckResult, grad_check
from .nn import batch_norm, bilstm_layer, bilstm_reference, dropout, layer_norm, lstm, lstm_cell
from .params import ParamStore
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    attention,
    backward,
    clip,
    concat,
    conv1d,
    div,
    cumsum,
    exp,
    index,
    linear,
    log,
    matmul,
    mean,
    merge_heads,
    mul,
    no_grad,
    pair_attention,
    record_kinks,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_time,
    softmax,
    softplus,
    split_heads,
    sub,
    sum,
    tanh,
    transpose,
)

DiffNode = Tensor

__all__ = [
    "DiffNode",
    "GradCheckResult",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "add",
    "as_tensor",
    "attention",
    "backward",
    "batch_norm",
    "bilstm_layer",
    "bilstm_reference",
    "clip",
    "concat",
    "conv1d",
    "div",
    "cumsum",
    "dropout",
    "exp",
    "grad_check",
    "index",
    "layer_norm",
    "linear",
    "log",
    "lstm",
    "lstm_cell",
    "matmul",
    "mean",
    "merge_heads",
    "mul",
    "no_grad",
    "pair_attention",
    "record_kinks",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "slice_time",
    "softmax",
    "softplus",
    "split_heads",
    "sub",
    "sum",
    "tanh",
    "transpose",
]
