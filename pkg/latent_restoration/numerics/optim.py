"""
AdamW with decoupled weight decay, and exponential moving averages.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import torch

from latent_restoration.errors import ContractViolation
from latent_restoration.models import OptimizerConfig
from latent_restoration.numerics.tensor import ParamSet


@dataclass
class OptimState:
    """First/second moments per trainable parameter plus hyper-parameters."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    exp_avg: Dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: Dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def create(
        cls,
        params: ParamSet,
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> "OptimState":
        names = params.trainable_names
        return cls(
            lr=lr,
            beta1=betas[0],
            beta2=betas[1],
            eps=eps,
            weight_decay=weight_decay,
            exp_avg={n: torch.zeros_like(params[n]) for n in names},
            exp_avg_sq={n: torch.zeros_like(params[n]) for n in names},
        )

    @classmethod
    def from_config(cls, params: ParamSet, config: OptimizerConfig) -> "OptimState":
        return cls.create(
            params, lr=config.lr, betas=config.betas, eps=config.eps,
            weight_decay=config.weight_decay,
        )

    def state_tensors(self) -> "OrderedDict[str, torch.Tensor]":
        """Moments keyed for the checkpoint container."""
        out = OrderedDict()
        for name in self.exp_avg:
            out[f"exp_avg.{name}"] = self.exp_avg[name]
            out[f"exp_avg_sq.{name}"] = self.exp_avg_sq[name]
        return out


def adamw_step(params: ParamSet, grads: Mapping[str, torch.Tensor], state: OptimState) -> ParamSet:
    """One AdamW update.

    Weight decay multiplies the parameter by ``1 - lr * weight_decay`` before
    the bias-corrected Adam step; it never enters the moments. Frozen
    parameters are carried over unchanged. ``state`` is advanced in place.

    Args:
        params: Current parameters
        grads: Gradient per parameter name
        state: Moments and hyper-parameters

    Returns:
        Updated parameter set with ``step`` incremented

    Raises:
        ContractViolation: If a trainable parameter has no gradient or moments
    """
    trainable = params.trainable_names
    missing = [n for n in trainable if n not in grads]
    if missing:
        raise ContractViolation(f"missing gradients for trainable parameters: {missing}")
    untracked = [n for n in trainable if n not in state.exp_avg]
    if untracked:
        raise ContractViolation(f"optimizer state has no moments for: {untracked}")

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step

    updates = OrderedDict()
    with torch.no_grad():
        for name in trainable:
            p = params[name].detach()
            g = grads[name].detach()
            if g.shape != p.shape:
                raise ContractViolation(
                    f"gradient for '{name}' has shape {tuple(g.shape)}, expected {tuple(p.shape)}"
                )
            m = state.beta1 * state.exp_avg[name] + (1.0 - state.beta1) * g
            v = state.beta2 * state.exp_avg_sq[name] + (1.0 - state.beta2) * g * g
            state.exp_avg[name] = m
            state.exp_avg_sq[name] = v

            m_hat = m / bias1
            v_hat = v / bias2
            decayed = p * (1.0 - state.lr * state.weight_decay)
            updates[name] = decayed - state.lr * m_hat / (v_hat.sqrt() + state.eps)

    return params.replace(updates, step=params.step + 1)


def ema_update(shadow: ParamSet, live: ParamSet, decay: float) -> ParamSet:
    """shadow' = decay * shadow + (1 - decay) * live, elementwise.

    Raises:
        ContractViolation: On decay outside [0, 1), differing names or shapes
    """
    if not 0.0 <= decay < 1.0:
        raise ContractViolation(f"EMA decay must lie in [0, 1), got {decay}")
    if list(shadow) != list(live):
        raise ContractViolation("EMA shadow and live parameter sets have different names")

    updates = OrderedDict()
    with torch.no_grad():
        for name in shadow:
            s, p = shadow[name], live[name].detach()
            if s.shape != p.shape:
                raise ContractViolation(
                    f"EMA shape mismatch for '{name}': {tuple(s.shape)} vs {tuple(p.shape)}"
                )
            updates[name] = decay * s + (1.0 - decay) * p
    return shadow.replace(updates, step=live.step)


def ema_decay_schedule(step: int, decay: float, warmup: bool = True) -> float:
    """Effective decay at ``step``; warm-up caps it at (1 + step) / (10 + step)."""
    if not warmup:
        return decay
    return min(decay, (1.0 + step) / (10.0 + step))
