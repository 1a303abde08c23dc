"""Tensors, reverse-mode differentiation, Adam, and the finite-difference oracle."""
from .gradcheck import finite_difference_gradient, relative_error
from .kernels import BACKEND
from .optim import Adam, AdamState, adam_step
from .tensor import (
    MaskError,
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    binary_cross_entropy,
    cross_entropy_from_logits,
    layer_norm,
    layer_norm_rows,
    masked_fill,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_rows,
    sub,
    swapaxes,
    take,
    tsum,
)
