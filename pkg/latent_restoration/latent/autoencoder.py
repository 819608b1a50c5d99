"""
The frozen latent space: encoder/decoder architectures, training, and the
reconstruction error that enters the restoration bound.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import torch
from torch import nn

from latent_restoration.config import Config
from latent_restoration.errors import ContractViolation, NumericError, TrainingError
from latent_restoration.logging import log_error, log_info
from latent_restoration.models import AutoEncoderConfig, AutoEncoderKind
from latent_restoration.numerics import (
    OptimState,
    ParamSet,
    adamw_step,
    call_module,
    check_finite,
    grad,
    load_checkpoint,
    save_checkpoint,
)


class ConvEncoder(nn.Module):
    def __init__(self, image_channels: int, hidden_channels: int, latent_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(image_channels, hidden_channels, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden_channels, latent_channels, 3, stride=2, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class ConvDecoder(nn.Module):
    def __init__(self, image_channels: int, hidden_channels: int, latent_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(latent_channels, hidden_channels, 3, padding=1),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(hidden_channels, image_channels, 3, padding=1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.body(z)


class LinearEncoder(nn.Module):
    """Pixel-unshuffle then a 1x1 convolution; identity-capable when wide enough."""

    def __init__(self, image_channels: int, latent_channels: int, factor: int):
        super().__init__()
        self.unshuffle = nn.PixelUnshuffle(factor)
        self.proj = nn.Conv2d(image_channels * factor * factor, latent_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.unshuffle(x))


class LinearDecoder(nn.Module):
    def __init__(self, image_channels: int, latent_channels: int, factor: int):
        super().__init__()
        self.proj = nn.Conv2d(latent_channels, image_channels * factor * factor, 1)
        self.shuffle = nn.PixelShuffle(factor)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.shuffle(self.proj(z))


def build_codec(config: AutoEncoderConfig) -> Tuple[nn.Module, nn.Module]:
    """Encoder and decoder architectures for ``config.kind``."""
    if config.kind == AutoEncoderKind.CONV:
        return (
            ConvEncoder(config.image_channels, config.hidden_channels, config.latent_channels),
            ConvDecoder(config.image_channels, config.hidden_channels, config.latent_channels),
        )
    if config.kind == AutoEncoderKind.LINEAR:
        return (
            LinearEncoder(config.image_channels, config.latent_channels, config.factor),
            LinearDecoder(config.image_channels, config.latent_channels, config.factor),
        )
    return nn.Identity(), nn.Identity()


def _identity_init(codec: nn.Module, config: AutoEncoderConfig) -> None:
    width = config.image_channels * config.factor ** 2
    if config.latent_channels < width:
        raise ContractViolation(
            f"identity init needs latent_channels >= {width}, got {config.latent_channels}"
        )
    eye = torch.eye(config.latent_channels, width)
    with torch.no_grad():
        codec.encoder.proj.weight.copy_(eye[:, :, None, None])
        codec.encoder.proj.bias.zero_()
        codec.decoder.proj.weight.copy_(eye.t()[:, :, None, None])
        codec.decoder.proj.bias.zero_()


class AutoEncoder:
    """Encoder/decoder pair whose weights live in one ``ParamSet``.

    Parameter names are prefixed ``encoder.`` and ``decoder.``. After
    ``freeze()`` every name is frozen and the weights never change again.
    """

    def __init__(self, config: AutoEncoderConfig, params: Optional[ParamSet] = None, seed: int = 0):
        self.config = config
        self._frozen = False
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            encoder, decoder = build_codec(config)
        self.codec = nn.ModuleDict({"encoder": encoder, "decoder": decoder})
        if params is None:
            if config.init_identity and config.kind == AutoEncoderKind.LINEAR:
                _identity_init(self.codec, config)
            params = ParamSet.from_module(self.codec.to(Config.get_torch_dtype()))
        expected = {n: tuple(p.shape) for n, p in self.codec.named_parameters()}
        if params.shapes() != expected:
            raise ContractViolation("parameter set does not match the autoencoder architecture")
        self.params = params

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def factor(self) -> int:
        return self.config.spatial_factor

    @property
    def latent_channels(self) -> int:
        if self.config.kind == AutoEncoderKind.IDENTITY:
            return self.config.image_channels
        return self.config.latent_channels

    def latent_shape(self, image_shape: Tuple[int, int, int]) -> Tuple[int, int, int]:
        """(c, h, w) latent for a (C, H, W) image."""
        _, h, w = image_shape
        return self.latent_channels, h // self.factor, w // self.factor

    def freeze(self) -> "AutoEncoder":
        self.params = self.params.freeze()
        self._frozen = True
        return self

    def encoder_params(self, params: Optional[ParamSet] = None) -> ParamSet:
        return (self.params if params is None else params).subset("encoder.")

    def decoder_params(self, params: Optional[ParamSet] = None) -> ParamSet:
        return (self.params if params is None else params).subset("decoder.")

    def _check_image(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.config.image_channels:
            raise ContractViolation(
                f"expected (N, {self.config.image_channels}, H, W) images, got {tuple(x.shape)}"
            )
        if x.shape[2] % self.factor or x.shape[3] % self.factor:
            raise ContractViolation(
                f"image sides {tuple(x.shape[2:])} must be divisible by {self.factor}"
            )

    def encode(self, x: torch.Tensor, encoder_params: Optional[ParamSet] = None) -> torch.Tensor:
        """Images (N, C, H, W) to latents.

        ``encoder_params`` (unprefixed names) substitutes other encoder weights,
        such as the trainable LQ copy; the default is the frozen encoder.
        """
        self._check_image(x)
        params = self.encoder_params() if encoder_params is None else encoder_params
        return check_finite(call_module(self.codec.encoder, params, x), "encoder output")

    def decode(self, z: torch.Tensor, clip: bool = False) -> torch.Tensor:
        """Latents to images. Clipping is for evaluation only, never inside a loss."""
        if z.dim() != 4 or z.shape[1] != self.latent_channels:
            raise ContractViolation(
                f"expected (N, {self.latent_channels}, h, w) latents, got {tuple(z.shape)}"
            )
        x = check_finite(call_module(self.codec.decoder, self.decoder_params(), z), "decoder output")
        return x.clamp(0.0, 1.0) if clip else x

    def reconstruct(self, x: torch.Tensor, params: Optional[ParamSet] = None) -> torch.Tensor:
        params = self.params if params is None else params
        z = self.encode(x, self.encoder_params(params))
        return call_module(self.codec.decoder, self.decoder_params(params), z)

    def reconstruction_error(self, x: torch.Tensor, batch_size: int = 256) -> float:
        """Mean squared reconstruction error over all elements (64-bit accumulation)."""
        total, count = 0.0, 0
        with torch.no_grad():
            for start in range(0, x.shape[0], batch_size):
                chunk = x[start:start + batch_size]
                diff = (self.reconstruct(chunk) - chunk).double()
                total += float((diff * diff).sum())
                count += diff.numel()
        return total / max(count, 1)

    def metadata(self, delta: Optional[float] = None) -> dict:
        return {
            "kind": self.config.kind.value,
            "config": self.config.model_dump(mode="json"),
            "factor": self.factor,
            "latent_channels": self.latent_channels,
            "image_channels": self.config.image_channels,
            "delta_ed": delta,
        }

    def save(self, path: Union[str, Path], delta: Optional[float] = None) -> Path:
        return save_checkpoint(path, self.params, self.metadata(delta))

    @classmethod
    def load(cls, path: Union[str, Path]) -> Tuple["AutoEncoder", Optional[float]]:
        """Load a frozen autoencoder and its recorded reconstruction error."""
        params, metadata = load_checkpoint(path)
        config = AutoEncoderConfig.model_validate(metadata["config"])
        return cls(config, params=params).freeze(), metadata.get("delta_ed")


@dataclass
class AutoEncoderResult:
    autoencoder: AutoEncoder
    delta: float  # held-out mean squared reconstruction error
    holdout: torch.Tensor
    history: list


def train_autoencoder(
    images: torch.Tensor,
    config: AutoEncoderConfig,
    seed: int = 0,
    checkpoint_path: Optional[Path] = None,
    run_id: str = "",
) -> AutoEncoderResult:
    """Fit (E, D) to minimize mean ||D(E(x)) - x||^2 with AdamW, then freeze.

    Args:
        images: HQ images (N, C, H, W)
        config: Architecture and schedule
        seed: Seeds initialization, the hold-out split and batch order
        checkpoint_path: Where the last good weights are kept during training
        run_id: Run identifier for logging

    Returns:
        The frozen autoencoder, its held-out error, the hold-out set and the
        per-epoch training losses

    Raises:
        ContractViolation: If the dataset is empty
        TrainingError: If the loss stops being finite
    """
    n = images.shape[0]
    if n == 0:
        raise ContractViolation("cannot train an autoencoder on an empty dataset")
    generator = torch.Generator().manual_seed(seed)
    order = torch.randperm(n, generator=generator)
    n_hold = min(max(1, int(round(n * config.holdout_fraction))), n - 1) if n > 1 else 0
    holdout = images[order[n - n_hold:]] if n_hold else images
    train = images[order[:n - n_hold]]

    autoencoder = AutoEncoder(config, seed=seed)
    autoencoder._check_image(images)
    params = autoencoder.params
    history = []

    if len(params) and config.epochs > 0:
        state = OptimState.create(params, lr=config.lr, weight_decay=config.weight_decay)

        seen = []

        def loss_fn(p: ParamSet, batch: torch.Tensor) -> torch.Tensor:
            loss = ((autoencoder.reconstruct(batch, p) - batch) ** 2).mean()
            seen.append(float(loss.detach()))
            return loss

        last_good: Optional[Path] = None
        for epoch in range(config.epochs):
            perm = torch.randperm(train.shape[0], generator=generator)
            seen.clear()
            for start in range(0, train.shape[0], config.batch_size):
                batch = train[perm[start:start + config.batch_size]]
                try:
                    grads = grad(lambda p: loss_fn(p, batch), params)
                except NumericError as e:
                    log_error(
                        "Autoencoder loss diverged", run_id=run_id, stage="train-ae",
                        epoch=epoch, exc_info=True,
                    )
                    raise TrainingError(f"autoencoder training diverged: {e}", last_checkpoint=last_good) from e
                params = adamw_step(params, grads, state)
            history.append(sum(seen) / max(len(seen), 1))
            if checkpoint_path is not None:
                last_good = save_checkpoint(checkpoint_path, params, autoencoder.metadata())
            log_info(
                "Autoencoder epoch finished", run_id=run_id, stage="train-ae",
                epoch=epoch, loss=history[-1],
            )
        autoencoder.params = params

    autoencoder.freeze()
    delta = autoencoder.reconstruction_error(holdout)
    log_info("Autoencoder frozen", run_id=run_id, stage="train-ae", delta_ed=delta, holdout=int(holdout.shape[0]))
    return AutoEncoderResult(autoencoder=autoencoder, delta=delta, holdout=holdout, history=history)
