from .tensor import Tensor, backward, lift, param, zero_grad
from .ops import (
    ShapeError,
    add,
    avg_pool1d,
    causal_mha,
    concat,
    conv1d,
    cross_entropy,
    dense,
    embedding_lookup,
    exp,
    gelu,
    global_avg_pool,
    l2_normalize,
    layer_norm,
    log,
    masked_fill,
    matmul,
    mean_,
    mse,
    mul,
    neg,
    reshape,
    silu,
    slice_axis,
    softmax,
    sub,
    sum_,
    transpose,
)
from .optim import AdamWState, adamw_step, cosine_warmup_lr, init_truncated_normal
from .checkpoint import CheckpointError, load_arrays, save_arrays

__all__ = [
    "Tensor", "backward", "lift", "param", "zero_grad",
    "ShapeError", "add", "avg_pool1d", "causal_mha", "concat", "conv1d",
    "cross_entropy", "dense", "embedding_lookup", "exp", "gelu",
    "global_avg_pool", "l2_normalize", "layer_norm", "log", "masked_fill",
    "matmul", "mean_", "mse", "mul", "neg", "reshape", "silu", "slice_axis",
    "softmax", "sub", "sum_", "transpose",
    "AdamWState", "adamw_step", "cosine_warmup_lr", "init_truncated_normal",
    "CheckpointError", "load_arrays", "save_arrays",
]
