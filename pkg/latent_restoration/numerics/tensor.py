"""
Parameter sets, reverse-mode gradients and finite-difference oracles.

Networks are plain ``torch.nn.Module`` architectures; their weights live in a
``ParamSet`` and are bound at call time with ``torch.func.functional_call``.
That keeps frozen, live, stop-gradient and EMA copies as separate values over
one architecture.
"""

from collections import OrderedDict
from typing import Callable, Dict, Iterable, Iterator, Mapping, Optional, TypeVar

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from latent_restoration.config import Config
from latent_restoration.errors import ContractViolation, NumericError

LossFn = Callable[["ParamSet"], torch.Tensor]
Checked = TypeVar("Checked", torch.Tensor, np.ndarray)


class ParamSet(Mapping[str, torch.Tensor]):
    """Named parameter tensors plus an optimizer step counter.

    Names listed in ``frozen`` never receive gradient and are never updated.
    """

    def __init__(
        self,
        tensors: Mapping[str, torch.Tensor],
        step: int = 0,
        frozen: Iterable[str] = (),
    ):
        self._tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict(tensors)
        if step < 0:
            raise ContractViolation(f"step counter must be non-negative, got {step}")
        self.step = step
        self.frozen = frozenset(frozen)
        unknown = self.frozen - set(self._tensors)
        if unknown:
            raise ContractViolation(f"frozen names not in parameter set: {sorted(unknown)}")

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} tensors, {self.numel()} values, step={self.step})"

    @classmethod
    def from_module(cls, module: nn.Module, frozen: bool = False) -> "ParamSet":
        """Snapshot a module's parameters (detached copies)."""
        tensors = OrderedDict(
            (name, p.detach().clone()) for name, p in module.named_parameters()
        )
        return cls(tensors, frozen=tensors.keys() if frozen else ())

    @property
    def trainable_names(self) -> list:
        return [name for name in self._tensors if name not in self.frozen]

    def numel(self) -> int:
        return sum(t.numel() for t in self._tensors.values())

    def shapes(self) -> Dict[str, tuple]:
        return {name: tuple(t.shape) for name, t in self._tensors.items()}

    def replace(self, updates: Mapping[str, torch.Tensor], step: Optional[int] = None) -> "ParamSet":
        """Return a new set with some tensors swapped; names and shapes are immutable."""
        tensors = OrderedDict(self._tensors)
        for name, value in updates.items():
            if name not in tensors:
                raise ContractViolation(f"unknown parameter '{name}'")
            if tuple(value.shape) != tuple(tensors[name].shape):
                raise ContractViolation(
                    f"shape of '{name}' is fixed at {tuple(tensors[name].shape)}, got {tuple(value.shape)}"
                )
            tensors[name] = value
        return ParamSet(tensors, step=self.step if step is None else step, frozen=self.frozen)

    def detached(self) -> "ParamSet":
        """Gradient-isolated view: identical values, no backward path."""
        return ParamSet(
            OrderedDict((n, t.detach()) for n, t in self._tensors.items()),
            step=self.step,
            frozen=self.frozen,
        )

    def clone(self) -> "ParamSet":
        return ParamSet(
            OrderedDict((n, t.detach().clone()) for n, t in self._tensors.items()),
            step=self.step,
            frozen=self.frozen,
        )

    def freeze(self, names: Optional[Iterable[str]] = None) -> "ParamSet":
        """Mark names (default: all) as frozen."""
        names = self._tensors.keys() if names is None else names
        return ParamSet(self._tensors, step=self.step, frozen=self.frozen | set(names))

    def unfreeze(self) -> "ParamSet":
        return ParamSet(self._tensors, step=self.step, frozen=())

    def to(self, dtype: torch.dtype) -> "ParamSet":
        return ParamSet(
            OrderedDict((n, t.to(dtype)) for n, t in self._tensors.items()),
            step=self.step,
            frozen=self.frozen,
        )

    def requiring_grad(self) -> "ParamSet":
        """Fresh leaf tensors; trainable ones track gradient."""
        leaves = OrderedDict()
        for name, t in self._tensors.items():
            leaf = t.detach()
            if name not in self.frozen:
                leaf = leaf.clone().requires_grad_(True)
            leaves[name] = leaf
        return ParamSet(leaves, step=self.step, frozen=self.frozen)

    def flatten(self) -> torch.Tensor:
        if not self._tensors:
            return torch.zeros(0)
        return torch.cat([t.detach().reshape(-1) for t in self._tensors.values()])

    def equal(self, other: "ParamSet") -> bool:
        """Bitwise equality of names, shapes and values."""
        if list(self) != list(other):
            return False
        return all(torch.equal(self[n], other[n]) for n in self)

    def merged(self, other: "ParamSet", prefix_self: str, prefix_other: str) -> "ParamSet":
        """Join two sets under name prefixes (frozen flags carried over)."""
        tensors = OrderedDict()
        frozen = set()
        for prefix, params in ((prefix_self, self), (prefix_other, other)):
            for name, t in params.items():
                tensors[f"{prefix}{name}"] = t
                if name in params.frozen:
                    frozen.add(f"{prefix}{name}")
        return ParamSet(tensors, step=self.step, frozen=frozen)

    def subset(self, prefix: str) -> "ParamSet":
        """Inverse of ``merged`` for one prefix."""
        tensors = OrderedDict(
            (name[len(prefix):], t) for name, t in self._tensors.items() if name.startswith(prefix)
        )
        frozen = {name[len(prefix):] for name in self.frozen if name.startswith(prefix)}
        return ParamSet(tensors, step=self.step, frozen=frozen)


def call_module(module: nn.Module, params: Mapping[str, torch.Tensor], *args) -> torch.Tensor:
    """Run ``module`` with the given parameter values bound."""
    return functional_call(module, dict(params), args)


def stop_gradient(x: torch.Tensor) -> torch.Tensor:
    """Identity forward, zero backward."""
    return x.detach()


def check_finite(x: Checked, where: str, step: Optional[int] = None) -> Checked:
    """Screen a tensor or array for NaN/Inf when debug numerics are enabled."""
    if not Config.DEBUG_NUMERICS:
        return x
    finite = np.isfinite(x).all() if isinstance(x, np.ndarray) else torch.isfinite(x).all()
    if not finite:
        raise NumericError(f"non-finite values in {where}", step=step)
    return x


def require_finite(x: torch.Tensor, where: str, step: Optional[int] = None) -> torch.Tensor:
    """Always-on variant used for losses and solver states."""
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite values in {where}", step=step)
    return x


def grad(loss_fn: LossFn, params: ParamSet) -> Dict[str, torch.Tensor]:
    """Gradient of a scalar loss with respect to every parameter.

    Frozen parameters, and parameters the loss does not depend on, receive
    exact zeros.

    Raises:
        ContractViolation: If the loss is not a scalar
        NumericError: If the loss is not finite
    """
    leaves = params.requiring_grad()
    loss = loss_fn(leaves)
    if not isinstance(loss, torch.Tensor) or loss.dim() != 0:
        shape = tuple(loss.shape) if isinstance(loss, torch.Tensor) else type(loss).__name__
        raise ContractViolation(f"loss must be a scalar tensor, got {shape}")
    require_finite(loss, "loss")

    result = OrderedDict((name, torch.zeros_like(t)) for name, t in leaves.items())
    trainable = leaves.trainable_names
    if not trainable or not loss.requires_grad:
        return result

    grads = torch.autograd.grad(loss, [leaves[n] for n in trainable], allow_unused=True)
    for name, g in zip(trainable, grads):
        if g is not None:
            result[name] = g
    return result


def finite_difference_grad(loss_fn: LossFn, params: ParamSet, h: float = 1e-4) -> Dict[str, torch.Tensor]:
    """Central finite differences, one element at a time (oracle for ``grad``)."""
    base = params.detached().clone()
    result = OrderedDict((name, torch.zeros_like(t)) for name, t in base.items())
    with torch.no_grad():
        for name in base.trainable_names:
            flat = base[name].reshape(-1)
            out = result[name].reshape(-1)
            for k in range(flat.numel()):
                original = flat[k].item()
                flat[k] = original + h
                f_plus = float(loss_fn(base))
                flat[k] = original - h
                f_minus = float(loss_fn(base))
                flat[k] = original
                out[k] = (f_plus - f_minus) / (2.0 * h)
    return result


def gradient_check(
    loss_fn: LossFn,
    params: ParamSet,
    h: float = 1e-4,
    atol: float = 1e-10,
) -> float:
    """Relative error between analytic and finite-difference gradients.

    Returns ``||g - g_fd|| / max(||g||, ||g_fd||, atol)`` over all trainable
    parameters. Meaningful in 64-bit.
    """
    analytic = grad(loss_fn, params)
    numeric = finite_difference_grad(loss_fn, params, h=h)
    names = params.trainable_names
    a = torch.cat([analytic[n].reshape(-1).double() for n in names])
    f = torch.cat([numeric[n].reshape(-1).double() for n in names])
    scale = max(a.norm().item(), f.norm().item(), atol)
    return (a - f).norm().item() / scale


def seed_everything(seed: int) -> torch.Generator:
    """Seed torch, pin threads, and return a dedicated generator."""
    torch.manual_seed(seed)
    torch.set_num_threads(Config.NUM_THREADS)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return torch.Generator().manual_seed(seed)
