from .core import (
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    grad_enabled,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sub,
    tmean,
    transpose,
    tsum,
)
from .functional import (
    bicubic_sample_at,
    bicubic_upsample,
    conv2d,
    l1_loss,
    layer_norm,
    replicate_pad,
    softmax,
    upsample_grid_coords,
)
from .attention import multi_head_attention
from .optim import AdamState, adam_step
from .gradcheck import finite_diff_check

__all__ = [
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "broadcast_to",
    "concat",
    "grad_enabled",
    "matmul",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "scale",
    "sub",
    "tmean",
    "transpose",
    "tsum",
    "bicubic_sample_at",
    "bicubic_upsample",
    "conv2d",
    "l1_loss",
    "layer_norm",
    "replicate_pad",
    "softmax",
    "upsample_grid_coords",
    "multi_head_attention",
    "AdamState",
    "adam_step",
    "finite_diff_check",
]
