"""Small numpy network toolkit: autodiff tensors, layers, Adam, checkpoints."""
from .layers import ALLOWED_KERNELS, Conv2d, ConvTranspose2d, Linear, Module, count_params
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    bce_loss,
    ce_loss,
    concat,
    conv2d,
    conv_transpose2d,
    global_avg_pool,
    linear,
    loss,
    max_pool2d,
    mse_loss,
    no_grad,
    precision,
    relu,
    sigmoid,
    softmax,
)

__all__ = [
    "ALLOWED_KERNELS", "Adam", "AdamState", "Conv2d", "ConvTranspose2d", "Linear", "Module", "Tensor",
    "adam_step", "bce_loss", "ce_loss", "concat", "conv2d", "conv_transpose2d", "count_params",
    "global_avg_pool", "linear", "loss", "max_pool2d", "mse_loss", "no_grad", "precision", "relu", "sigmoid",
    "softmax",
]
