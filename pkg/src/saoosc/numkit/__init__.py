"""Minimal differentiable computation core: tensors, reverse-mode gradients, Adam."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn import Conv2d, LayerNorm, Linear, Module, MultiHeadAttention, TransformerBlock
from .optim import Adam, AdamState, adam_step
from .random import split, stream
from .tensor import (
    ShapeError,
    Tensor,
    affine,
    as_tensor,
    attention,
    clamp_min,
    clip,
    concat,
    conv2d,
    exp,
    gaussian_cdf,
    gelu,
    index,
    layer_norm,
    log,
    log2,
    matmul,
    mean,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    squared_error,
    tabs,
    tanh,
    transpose,
    tsum,
    upsample_nearest,
)

