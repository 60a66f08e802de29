"""Small reverse-mode differentiation kernel and the layers IKrNet needs."""
from .layers import (
    LSTMWeights,
    adaptive_avg_pool1d,
    batchnorm1d,
    bce_loss,
    bilstm,
    conv1d,
    linear,
    lstm_cell,
    lstm_direction,
    squeeze_excite,
)
from .optim import AdamWState, adamw_init, adamw_step, clip_grad_norm
from .tensor import (
    Tensor,
    add,
    concat,
    flip,
    getitem,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    stack,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "AdamWState", "LSTMWeights", "Tensor", "adamw_init", "adamw_step", "adaptive_avg_pool1d",
    "add", "batchnorm1d", "bce_loss", "bilstm", "clip_grad_norm", "concat", "conv1d", "flip",
    "getitem", "linear", "log", "lstm_cell", "lstm_direction", "matmul", "mean", "mul",
    "no_grad", "relu", "reshape", "sigmoid", "squeeze_excite", "stack", "sub", "sum_", "tanh",
    "transpose",
]
