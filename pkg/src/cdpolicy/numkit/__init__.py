from .optim import AdamWState, LrSchedule, adamw_step, lr_at
from .rng import normal, stream
from .tensor import (
    ShapeError,
    Tensor,
    activation,
    add,
    affine,
    backward,
    concat,
    grad,
    grad_enabled,
    leaves,
    matmul,
    max_pool,
    mean,
    mish,
    mse,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sub,
    tanh,
)
from .tensor import sum as tsum

__all__ = [
    "AdamWState",
    "LrSchedule",
    "ShapeError",
    "Tensor",
    "activation",
    "adamw_step",
    "add",
    "affine",
    "backward",
    "concat",
    "grad",
    "grad_enabled",
    "leaves",
    "lr_at",
    "matmul",
    "max_pool",
    "mean",
    "mish",
    "mse",
    "normal",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "scale",
    "stream",
    "sub",
    "tanh",
    "tsum",
]
