from .core import (
    DEFAULT_DTYPE,
    PRIMITIVES,
    GradientError,
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward_pass,
    broadcast_to,
    concat,
    cos,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    ones,
    power,
    relu,
    reshape,
    sin,
    sqrt,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
    zeros,
)
from .functional import activation, gelu, layer_norm, linear, multi_head_attention, softmax
from .gradcheck import GradCheckReport, grad_check
from .io import TensorFormatError, load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes
from .rng import Rng
