"""Minimal dense-tensor reverse-mode engine."""
from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    binary_cross_entropy,
    concat_last_dim,
    dropout,
    gather_mul_segment_max,
    gather_rows,
    leaky_relu,
    matmul,
    mul,
    add,
    scale,
    segment_max,
    segment_softmax,
    segment_sum,
    sigmoid,
    sum_last_dim,
    total,
)
from .optim import AdamState, adam_step
from .serialization import read_tensors, write_tensors
from .tensor import Tape, Tensor, as_tensor

__all__ = [
    "AdamState", "GradCheckReport", "Tape", "Tensor", "adam_step", "add", "as_tensor",
    "binary_cross_entropy", "concat_last_dim", "dropout", "gather_mul_segment_max", "gather_rows", "grad_check",
    "leaky_relu", "matmul", "mul", "read_tensors", "relative_error", "scale",
    "segment_max", "segment_softmax", "segment_sum", "sigmoid", "sum_last_dim",
    "total", "write_tensors",
]
