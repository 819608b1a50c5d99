"""
Vector field and coarse estimator networks, and the callables that bind them
to parameter sets.
"""

from typing import Optional, Union

import torch
import torch.nn.functional as F
from torch import nn

from latent_restoration.config import Config
from latent_restoration.latent.autoencoder import AutoEncoder
from latent_restoration.latent.collapsible import collapse_params, make_block
from latent_restoration.models import FlowConfig
from latent_restoration.numerics import ParamSet, call_module

TimeLike = Union[float, torch.Tensor]


def time_vector(t: TimeLike, like: torch.Tensor) -> torch.Tensor:
    """Broadcast a scalar or per-sample time to shape (N,)."""
    if not isinstance(t, torch.Tensor):
        t = torch.tensor(float(t))
    t = t.to(dtype=like.dtype, device=like.device)
    if t.dim() == 0:
        return t.expand(like.shape[0])
    return t.reshape(-1)


def pad_t_like(t: TimeLike, x: torch.Tensor) -> Union[float, torch.Tensor]:
    """Reshape a per-sample time (N,) to (N, 1, 1, 1) for broadcasting against x."""
    if not isinstance(t, torch.Tensor):
        return t
    if t.dim() == 0:
        return t
    return t.reshape(-1, *([1] * (x.dim() - 1)))


class VectorFieldNet(nn.Module):
    """Three-level convolutional encoder-decoder with skip connections.

    Time enters as an extra constant input channel. Every 3x3 stage at full
    resolution and in the bottleneck is a collapsible block.
    """

    def __init__(
        self,
        latent_channels: int,
        widths=(16, 32, 64),
        expansion: int = 4,
        collapsed: bool = False,
    ):
        super().__init__()
        self.latent_channels = latent_channels
        self.widths = tuple(widths)
        self.expansion = expansion
        w1, w2, w3 = widths
        self.inp = make_block(latent_channels + 1, w1, expansion, collapsed)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.mid1 = make_block(w2, w2, expansion, collapsed)
        self.down2 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.mid2 = make_block(w3, w3, expansion, collapsed)
        self.up2 = make_block(w3 + w2, w2, expansion, collapsed)
        self.up1 = make_block(w2 + w1, w1, expansion, collapsed)
        self.out = nn.Conv2d(w1, latent_channels, 3, padding=1)

    def forward(self, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        n, _, h, w = z.shape
        t_map = t.reshape(n, 1, 1, 1).expand(n, 1, h, w)
        h0 = F.silu(self.inp(torch.cat([z, t_map], dim=1)))
        h1 = F.silu(self.mid1(F.silu(self.down1(h0))))
        h2 = F.silu(self.mid2(F.silu(self.down2(h1))))
        u1 = F.silu(self.up2(torch.cat([F.interpolate(h2, size=h1.shape[-2:], mode="nearest"), h1], dim=1)))
        u0 = F.silu(self.up1(torch.cat([F.interpolate(u1, size=h0.shape[-2:], mode="nearest"), h0], dim=1)))
        return self.out(u0)


class ResidualDenseBlock(nn.Module):
    def __init__(self, width: int, growth: int = 12, residual_scale: float = 0.2):
        super().__init__()
        self.conv1 = nn.Conv2d(width, growth, 3, padding=1)
        self.conv2 = nn.Conv2d(width + growth, growth, 3, padding=1)
        self.conv3 = nn.Conv2d(width + 2 * growth, width, 3, padding=1)
        self.residual_scale = residual_scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1 = F.silu(self.conv1(x))
        x2 = F.silu(self.conv2(torch.cat([x, x1], dim=1)))
        x3 = self.conv3(torch.cat([x, x1, x2], dim=1))
        return x + self.residual_scale * x3


class CoarseEstimatorNet(nn.Module):
    """Cascade of residual dense blocks with a global skip from the input latent.

    The output convolution starts at zero, so an untrained estimator is the
    identity on its input.
    """

    def __init__(self, latent_channels: int, width: int = 24, blocks: int = 3):
        super().__init__()
        self.conv_in = nn.Conv2d(latent_channels, width, 3, padding=1)
        self.blocks = nn.ModuleList([ResidualDenseBlock(width) for _ in range(blocks)])
        self.conv_out = nn.Conv2d(width, latent_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        head = self.conv_in(z)
        body = head
        for block in self.blocks:
            body = block(body)
        return z + self.conv_out(body + head)


def _params_of(module: nn.Module, dtype: Optional[torch.dtype]) -> ParamSet:
    return ParamSet.from_module(module.to(dtype or Config.get_torch_dtype()))


class VectorField:
    """A vector field network bound to a parameter set: ``v(z, t)``."""

    def __init__(self, net: VectorFieldNet, params: ParamSet):
        self.net = net
        self.params = params

    @classmethod
    def initialize(
        cls,
        latent_channels: int,
        config: FlowConfig,
        seed: int = 0,
        dtype: Optional[torch.dtype] = None,
    ) -> "VectorField":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            net = VectorFieldNet(latent_channels, config.field_widths, config.expansion)
        return cls(net, _params_of(net, dtype))

    def __call__(self, z: torch.Tensor, t: TimeLike) -> torch.Tensor:
        return call_module(self.net, self.params, z, time_vector(t, z))

    def with_params(self, params: ParamSet) -> "VectorField":
        return VectorField(self.net, params)

    def detached(self) -> "VectorField":
        """The stop-gradient copy theta-minus."""
        return VectorField(self.net, self.params.detached())

    def collapsed(self) -> "VectorField":
        """Equivalent field with every collapsible block folded into one 3x3 convolution."""
        twin = VectorFieldNet(self.net.latent_channels, self.net.widths, self.net.expansion, collapsed=True)
        return VectorField(twin, collapse_params(self.net, self.params))


class CoarseEstimator:
    """z = g_phi(E_omega(y)) with parameter names ``encoder.*`` (omega) and ``g.*`` (phi).

    The encoder copy starts from the frozen encoder weights. With
    ``use_coarse_estimator`` off the estimator is just the frozen encoder.
    """

    def __init__(self, autoencoder: AutoEncoder, net: CoarseEstimatorNet, params: ParamSet, enabled: bool = True):
        self.autoencoder = autoencoder
        self.net = net
        self.params = params
        self.enabled = enabled

    @classmethod
    def initialize(
        cls,
        autoencoder: AutoEncoder,
        config: FlowConfig,
        seed: int = 0,
        dtype: Optional[torch.dtype] = None,
    ) -> "CoarseEstimator":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            net = CoarseEstimatorNet(autoencoder.latent_channels, config.coarse_width, config.coarse_blocks)
        g_params = _params_of(net, dtype)
        encoder = autoencoder.encoder_params().unfreeze().clone()
        if dtype is not None:
            encoder = encoder.to(dtype)
        enabled = config.use_coarse_estimator
        if not config.train_encoder or not enabled:
            encoder = encoder.freeze()
        if not enabled:
            g_params = g_params.freeze()
        params = encoder.merged(g_params, "encoder.", "g.")
        return cls(autoencoder, net, params, enabled=enabled)

    def __call__(self, y: torch.Tensor, params: Optional[ParamSet] = None) -> torch.Tensor:
        params = self.params if params is None else params
        z = self.autoencoder.encode(y, params.subset("encoder."))
        if not self.enabled:
            return z
        return call_module(self.net, params.subset("g."), z)

    def with_params(self, params: ParamSet) -> "CoarseEstimator":
        return CoarseEstimator(self.autoencoder, self.net, params, enabled=self.enabled)
