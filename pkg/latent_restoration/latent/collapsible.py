"""
Collapsible linear blocks: a 3x3 convolution widened by an expansion factor,
followed by a 1x1 projection, with nothing in between. At inference time the
pair folds into a single 3x3 convolution.
"""

from collections import OrderedDict
from typing import Mapping, Optional, Tuple

import torch
from torch import nn

from latent_restoration.errors import ContractViolation
from latent_restoration.numerics import ParamSet


class CollapsibleBlock(nn.Module):
    """conv3x3 (in -> out * expansion) then conv1x1 (-> out)."""

    def __init__(self, in_channels: int, out_channels: int, expansion: int = 4):
        super().__init__()
        hidden = out_channels * expansion
        self.expand = nn.Conv2d(in_channels, hidden, kernel_size=3, padding=1)
        self.project = nn.Conv2d(hidden, out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project(self.expand(x))


def make_block(in_channels: int, out_channels: int, expansion: int, collapsed: bool) -> nn.Module:
    """A collapsible block, or the plain 3x3 convolution it folds into."""
    if collapsed:
        return nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)
    return CollapsibleBlock(in_channels, out_channels, expansion)


def collapse_weights(
    w3: torch.Tensor, b3: torch.Tensor, w1: torch.Tensor, b1: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Fold conv1x1 after conv3x3 into one 3x3 kernel and bias.

    W[o, i] = sum_h w1[o, h] * w3[h, i] and b = w1 @ b3 + b1.

    Raises:
        ContractViolation: If the two convolutions cannot be composed
    """
    if w3.dim() != 4 or w3.shape[-2:] != (3, 3):
        raise ContractViolation(f"expected a 3x3 kernel, got shape {tuple(w3.shape)}")
    if w1.dim() != 4 or w1.shape[-2:] != (1, 1):
        raise ContractViolation(f"expected a 1x1 kernel, got shape {tuple(w1.shape)}")
    if w1.shape[1] != w3.shape[0]:
        raise ContractViolation(
            f"1x1 kernel reads {w1.shape[1]} channels but the 3x3 kernel writes {w3.shape[0]}"
        )
    if b3.shape != (w3.shape[0],) or b1.shape != (w1.shape[0],):
        raise ContractViolation("bias shapes do not match their kernels")
    projection = w1[:, :, 0, 0]
    weight = torch.einsum("oh,hikl->oikl", projection, w3)
    bias = projection @ b3 + b1
    return weight, bias


def collapse(
    block: CollapsibleBlock, params: Optional[Mapping[str, torch.Tensor]] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Collapsed (kernel, bias) of ``block``; ``params`` overrides its own weights."""
    if params is None:
        params = dict(block.named_parameters())
    return collapse_weights(
        params["expand.weight"], params["expand.bias"],
        params["project.weight"], params["project.bias"],
    )


def collapse_params(net: nn.Module, params: ParamSet) -> ParamSet:
    """Rewrite a parameter set of ``net`` for its collapsed twin.

    Every ``<path>.expand.*`` / ``<path>.project.*`` group of a
    ``CollapsibleBlock`` at ``<path>`` becomes ``<path>.weight`` / ``<path>.bias``;
    all other parameters are carried over.
    """
    block_paths = [name for name, m in net.named_modules() if isinstance(m, CollapsibleBlock)]
    folded = {}
    for path in block_paths:
        prefix = f"{path}." if path else ""
        with torch.no_grad():
            weight, bias = collapse_weights(
                params[f"{prefix}expand.weight"], params[f"{prefix}expand.bias"],
                params[f"{prefix}project.weight"], params[f"{prefix}project.bias"],
            )
        folded[prefix] = (weight, bias)

    tensors = OrderedDict()
    for name, tensor in params.items():
        owner = next((p for p in folded if name.startswith(p + "expand.") or name.startswith(p + "project.")), None)
        if owner is None:
            tensors[name] = tensor
        elif f"{owner}weight" not in tensors:
            tensors[f"{owner}weight"], tensors[f"{owner}bias"] = folded[owner]
    return ParamSet(tensors, step=params.step).freeze()
