"""Dense float64 layers with explicit backward passes, optimizers, and checks."""

from .gradcheck import grad_check, numeric_grad
from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    linear_backward,
    linear_forward,
    sigmoid,
)
from .optim import OptimizerConfig, ParamStore, optimizer_step
from .tensorio import decode_tensor, encode_tensor, load_tensor, save_tensor, to_f32_grid

__all__ = [
    "OptimizerConfig",
    "ParamStore",
    "batchnorm_backward",
    "batchnorm_forward",
    "decode_tensor",
    "encode_tensor",
    "grad_check",
    "linear_backward",
    "linear_forward",
    "load_tensor",
    "numeric_grad",
    "optimizer_step",
    "save_tensor",
    "sigmoid",
    "to_f32_grid",
]
