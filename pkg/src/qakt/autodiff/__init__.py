"""Small reverse-mode autodiff engine over numpy arrays."""
from .tensor import (
    Tensor, abs_, add, as_tensor, binary_cross_entropy, clip, concat, div, dropout,
    elementwise, exp, getitem, layer_norm, log, make_op, matmul, mean, mul, neg, no_grad, relu,
    reshape, set_debug, sigmoid, softmax_masked, split, sub, sum_, swapaxes, take, transpose,
)
from .optim import Adam, AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check, relative_error

__all__ = [
    "Tensor", "abs_", "add", "as_tensor", "binary_cross_entropy", "clip", "concat", "div",
    "dropout", "elementwise", "exp", "getitem", "layer_norm", "log", "matmul", "mean", "mul",
    "make_op", "neg", "no_grad", "relu", "reshape", "set_debug", "sigmoid", "softmax_masked", "split",
    "sub", "sum_", "swapaxes", "take", "transpose",
    "Adam", "AdamState", "adam_step", "GradCheckReport", "grad_check", "relative_error",
]
