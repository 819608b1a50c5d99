"""
Trajectories, segment-endpoint maps and the training objectives of latent
consistency flow matching.

All losses reduce with a mean over batch and elements.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import torch

from latent_restoration.errors import ContractViolation
from latent_restoration.latent.autoencoder import AutoEncoder
from latent_restoration.lcfm.networks import CoarseEstimator, TimeLike, VectorField, pad_t_like
from latent_restoration.models import FlowConfig, FlowObjective
from latent_restoration.numerics import check_finite, stop_gradient

FieldFn = Callable[[torch.Tensor, TimeLike], torch.Tensor]
IndexLike = Union[int, torch.Tensor]

_T_TOL = 1e-9


def _time_range(t: TimeLike) -> Tuple[float, float]:
    if isinstance(t, torch.Tensor):
        return float(t.min()), float(t.max())
    return float(t), float(t)


def trajectory_point(z0: torch.Tensor, z1: torch.Tensor, t: TimeLike, sigma_min: float) -> torch.Tensor:
    """z_t = t * z1 + (1 - (1 - sigma_min) * t) * z0.

    Raises:
        ContractViolation: If any t lies outside [0, 1]
    """
    lo, hi = _time_range(t)
    if lo < 0.0 or hi > 1.0:
        raise ContractViolation(f"trajectory time must lie in [0, 1], got [{lo}, {hi}]")
    t = pad_t_like(t, z0)
    return t * z1 + (1.0 - (1.0 - sigma_min) * t) * z0


def straight_velocity(z0: torch.Tensor, z1: torch.Tensor, sigma_min: float) -> torch.Tensor:
    """Velocity of the straight path, z1 - (1 - sigma_min) * z0."""
    return z1 - (1.0 - sigma_min) * z0


def segment_index(t: TimeLike, K: int) -> IndexLike:
    """i = min(floor(t * K), K - 1), for a float or per-sample tensor."""
    if isinstance(t, torch.Tensor):
        return torch.clamp(torch.floor(t * K), max=K - 1).long()
    return min(math.floor(t * K), K - 1)


def _endpoint(i: IndexLike, K: int, like: torch.Tensor) -> Union[float, torch.Tensor]:
    if isinstance(i, torch.Tensor):
        return pad_t_like((i + 1).to(like.dtype) / K, like)
    return (i + 1) / K


def _endpoint_extrapolation(
    z_t: torch.Tensor, t: TimeLike, i: IndexLike, K: int, v_t: torch.Tensor
) -> torch.Tensor:
    return z_t + (_endpoint(i, K, z_t) - pad_t_like(t, z_t)) * v_t


def f_map(z_t: torch.Tensor, t: TimeLike, i: IndexLike, K: int, v: FieldFn) -> torch.Tensor:
    """Segment-endpoint extrapolation z_t + ((i + 1) / K - t) * v(z_t, t).

    Raises:
        ContractViolation: If i is not the segment index of t
    """
    expected = segment_index(t, K)
    if isinstance(expected, torch.Tensor) or isinstance(i, torch.Tensor):
        matches = bool(torch.all(torch.as_tensor(i) == torch.as_tensor(expected)))
    else:
        matches = i == expected
    if not matches:
        raise ContractViolation(f"segment index {i} does not match t={t} with K={K}")
    return _endpoint_extrapolation(z_t, t, i, K, v(z_t, t))


def _check_gap(t: TimeLike, delta_t: float) -> None:
    lo, hi = _time_range(t)
    if lo < 0.0:
        raise ContractViolation(f"t must be non-negative, got {lo}")
    if hi + delta_t > 1.0 + _T_TOL:
        raise ContractViolation(f"t + delta_t exceeds 1 (t={hi}, delta_t={delta_t})")


def _shifted(t: TimeLike, delta_t: float) -> TimeLike:
    if isinstance(t, torch.Tensor):
        return torch.clamp(t + delta_t, max=1.0)
    return min(t + delta_t, 1.0)


def _segment_terms(
    z0: torch.Tensor, z1: torch.Tensor, t: TimeLike, cfg: FlowConfig, v: FieldFn
) -> Tuple[torch.Tensor, torch.Tensor, IndexLike, torch.Tensor]:
    """Consistency loss plus the live endpoint value, its segment and z_t."""
    _check_gap(t, cfg.delta_t)
    s = _shifted(t, cfg.delta_t)
    z_t = trajectory_point(z0, z1, t, cfg.sigma_min)
    z_s = trajectory_point(z0, z1, s, cfg.sigma_min)
    i = segment_index(t, cfg.K)
    j = segment_index(s, cfg.K) if cfg.own_segment_target else i

    v_t = v(z_t, t)
    f_t = _endpoint_extrapolation(z_t, t, i, cfg.K, v_t)
    with torch.no_grad():
        v_s = stop_gradient(v(z_s, s))
        f_s = _endpoint_extrapolation(z_s, s, j, cfg.K, v_s)

    loss = ((f_t - f_s) ** 2).mean() + cfg.alpha * ((v_t - v_s) ** 2).mean()
    return check_finite(loss, "segment loss"), f_t, i, z_t


def segment_loss(z0: torch.Tensor, z1: torch.Tensor, t: TimeLike, cfg: FlowConfig, v: FieldFn) -> torch.Tensor:
    """Multi-segment consistency loss.

    ||f(z_t, t) - f^-(z_{t+dt}, t+dt)||^2 + alpha * ||v(z_t, t) - v^-(z_{t+dt}, t+dt)||^2,
    where the second evaluation carries no gradient and both endpoint maps use
    the segment of t (or, with ``own_segment_target``, each time its own).
    Both points lie on the path of the same (z0, z1) pair.

    Raises:
        ContractViolation: If t < 0 or t + delta_t > 1
    """
    return _segment_terms(z0, z1, t, cfg, v)[0]


def velocity_consistency_loss(
    z0: torch.Tensor, z1: torch.Tensor, t: TimeLike, cfg: FlowConfig, v: FieldFn
) -> torch.Tensor:
    """Single-segment consistency loss with endpoint 1."""
    _check_gap(t, cfg.delta_t)
    s = _shifted(t, cfg.delta_t)
    z_t = trajectory_point(z0, z1, t, cfg.sigma_min)
    z_s = trajectory_point(z0, z1, s, cfg.sigma_min)
    v_t = v(z_t, t)
    with torch.no_grad():
        v_s = stop_gradient(v(z_s, s))
    f_t = z_t + (1.0 - pad_t_like(t, z_t)) * v_t
    f_s = z_s + (1.0 - pad_t_like(s, z_s)) * v_s
    return ((f_t - f_s) ** 2).mean() + cfg.alpha * ((v_t - v_s) ** 2).mean()


def flow_matching_loss(
    z0: torch.Tensor, z1: torch.Tensor, t: TimeLike, sigma_min: float, v: FieldFn
) -> torch.Tensor:
    """Plain straight-path regression E||v(z_t, t) - (z1 - (1 - sigma_min) z0)||^2."""
    z_t = trajectory_point(z0, z1, t, sigma_min)
    return ((v(z_t, t) - straight_velocity(z0, z1, sigma_min)) ** 2).mean()


def l2_coarse_loss(
    x: torch.Tensor,
    y: torch.Tensor,
    ce: CoarseEstimator,
    e_frozen: AutoEncoder,
    ce_params=None,
) -> torch.Tensor:
    """E||g(E_omega(y)) - E(x)||^2; gradient reaches omega and phi only."""
    with torch.no_grad():
        z1 = e_frozen.encode(x)
    return ((ce(y, ce_params) - z1) ** 2).mean()


def continue_to_one(f_val: torch.Tensor, i: IndexLike, K: int, v: FieldFn) -> torch.Tensor:
    """z_hat_1 = f + (1 - (i + 1) / K) * v(f, (i + 1) / K)."""
    if isinstance(i, torch.Tensor):
        if bool(((i < 0) | (i >= K)).any()):
            raise ContractViolation(f"segment indices must lie in [0, {K - 1}]")
        t_end = (i + 1).to(f_val.dtype) / K
    else:
        if not 0 <= i < K:
            raise ContractViolation(f"segment index {i} must lie in [0, {K - 1}]")
        t_end = (i + 1) / K
    return f_val + (1.0 - pad_t_like(t_end, f_val)) * v(f_val, t_end)


@dataclass
class FlowNets:
    """Everything the joint objective touches."""

    autoencoder: AutoEncoder
    estimator: CoarseEstimator
    field: VectorField


@dataclass
class DPTerms:
    lcfm: torch.Tensor
    mse: torch.Tensor
    total: torch.Tensor


def sample_times(n: int, delta_t: float, generator: torch.Generator, dtype: torch.dtype) -> torch.Tensor:
    """t ~ U[0, 1 - delta_t], one per sample."""
    return torch.rand(n, generator=generator, dtype=dtype) * (1.0 - delta_t)


def dp_loss(
    batch: Tuple[torch.Tensor, torch.Tensor],
    nets: FlowNets,
    cfg: FlowConfig,
    t: Optional[torch.Tensor] = None,
    eps: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None,
) -> DPTerms:
    """(1 - beta) * L_LCFM + beta * L_MSE.

    z comes from the coarse estimator with its gradient cut, z0 = z + eps,
    z1 = E(x). The MSE term decodes the continuation of the endpoint value to
    t = 1 through the frozen decoder. ``t`` and ``eps`` are drawn from
    ``generator`` when not given.
    """
    x, y = batch
    with torch.no_grad():
        z = stop_gradient(nets.estimator(y))
        z1 = nets.autoencoder.encode(x)
    if t is None:
        t = sample_times(x.shape[0], cfg.delta_t, generator, z.dtype)
    if eps is None:
        eps = torch.randn(z.shape, generator=generator, dtype=z.dtype) * cfg.sigma_s
    z0 = z + eps
    v = nets.field

    if cfg.objective == FlowObjective.FM:
        lcfm = flow_matching_loss(z0, z1, t, cfg.sigma_min, v)
        z_t = trajectory_point(z0, z1, t, cfg.sigma_min)
        z_hat = z_t + (1.0 - pad_t_like(t, z_t)) * v(z_t, t)
    else:
        lcfm, f_t, i, _ = _segment_terms(z0, z1, t, cfg, v)
        z_hat = continue_to_one(f_t, i, cfg.K, v)

    mse = ((x - nets.autoencoder.decode(z_hat)) ** 2).mean()
    total = (1.0 - cfg.beta) * lcfm + cfg.beta * mse
    return DPTerms(lcfm=lcfm, mse=mse, total=total)
