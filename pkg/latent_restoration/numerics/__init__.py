"""
Tensor substrate: parameter sets, gradients, AdamW, EMA and checkpoints.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .optim import OptimState, adamw_step, ema_decay_schedule, ema_update
from .tensor import (
    ParamSet,
    call_module,
    check_finite,
    finite_difference_grad,
    grad,
    gradient_check,
    require_finite,
    seed_everything,
    stop_gradient,
)

__all__ = [
    "ParamSet",
    "OptimState",
    "adamw_step",
    "call_module",
    "check_finite",
    "ema_decay_schedule",
    "ema_update",
    "finite_difference_grad",
    "grad",
    "gradient_check",
    "load_checkpoint",
    "require_finite",
    "save_checkpoint",
    "seed_everything",
    "stop_gradient",
]
