"""
Experiment configuration models.

Defaults are the desk-scale values derived from the published training
hyper-parameters (alpha = beta = 0.001, sigma_min = 1e-5, delta_t = 0.05,
EMA 0.999, AdamW betas (0.9, 0.999), weight decay 0.02).
"""

import warnings
from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    """Base model: unknown keys are errors, assignments are validated."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DegradationParams(StrictModel):
    """Parameters of one draw of the degradation model (unit-range intensities)."""

    sigma: float = Field(ge=0.0)  # blur std-dev in pixels
    r: float = Field(gt=0.0)  # resample factor
    delta: float = Field(ge=0.0)  # noise std-dev in intensity units
    q: int = Field(ge=1, le=100)  # quality factor
    kernel_size: int = Field(default=41, ge=1)
    # uniform quantization base of the compression surrogate; 0 disables that stage
    quant_base: float = Field(default=16.0, ge=0.0)

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return value


class ParamRanges(StrictModel):
    """Uniform sampling ranges for the degradation parameters."""

    sigma: Tuple[float, float] = (0.1, 15.0)
    r: Tuple[float, float] = (0.8, 32.0)
    # 0-255 scale range [0, 20] mapped to unit-range intensities
    delta: Tuple[float, float] = (0.0, 20.0 / 255.0)
    q: Tuple[float, float] = (30.0, 100.0)
    kernel_size: int = 41
    quant_base: float = Field(default=16.0, ge=0.0)

    @field_validator("sigma", "r", "delta", "q")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if lo > hi:
            raise ValueError(f"range lower bound {lo} exceeds upper bound {hi}")
        return value

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        return value

    @model_validator(mode="after")
    def _physical(self) -> "ParamRanges":
        if self.sigma[0] < 0 or self.delta[0] < 0:
            raise ValueError("sigma and delta ranges must be non-negative")
        if self.r[0] <= 0:
            raise ValueError("r range must be positive")
        if self.q[0] < 1 or self.q[1] > 100:
            raise ValueError("q range must lie in [1, 100]")
        return self

    @classmethod
    def desk(cls, image_size: int = 16) -> "ParamRanges":
        """Ranges for images a few dozen pixels wide.

        The full ranges shrink a 16x16 image to one pixel for most draws. Here
        the down-sampled image keeps a quarter of each side and the blur stays
        within a 9-tap kernel; noise and quality ranges are unchanged.
        """
        return cls(sigma=(0.1, 2.0), r=(0.8, max(1.0, image_size / 4.0)), kernel_size=9)

    @classmethod
    def identity(cls, kernel_size: int = 9) -> "ParamRanges":
        """Ranges under which every stage of the pipeline is the identity."""
        return cls(
            sigma=(0.0, 0.0), r=(1.0, 1.0), delta=(0.0, 0.0), q=(100.0, 100.0),
            kernel_size=kernel_size, quant_base=0.0,
        )


class GeneratorKind(str, Enum):
    """Procedural HQ image generators."""

    GAUSSIAN_BLOBS = "gaussian-blobs"
    RANDOM_RECTANGLES = "random-rectangles"
    SMOOTH_NOISE = "smooth-noise"


class TaskKind(str, Enum):
    """Degradation task presets."""

    BLIND = "blind"
    SUPER_RESOLUTION = "super-resolution"
    DENOISING = "denoising"
    INPAINTING = "inpainting"


class DatasetSpec(StrictModel):
    """Procedural paired dataset description."""

    image_size: int = Field(default=16, ge=8, le=64)
    channels: int = Field(default=1, ge=1, le=3)
    count: int = Field(default=2048, ge=1)
    val_count: int = Field(default=256, ge=1)
    seed: int = Field(default=0, ge=0)
    generator: GeneratorKind = GeneratorKind.GAUSSIAN_BLOBS
    task: TaskKind = TaskKind.BLIND
    # super-resolution factor and inpainting drop fraction for the task presets
    sr_factor: float = Field(default=4.0, gt=0.0)
    mask_fraction: float = Field(default=0.9, ge=0.0, lt=1.0)


class AutoEncoderKind(str, Enum):
    CONV = "conv"
    LINEAR = "linear"
    IDENTITY = "identity"


class AutoEncoderConfig(StrictModel):
    """Frozen latent space architecture and its training schedule."""

    kind: AutoEncoderKind = AutoEncoderKind.CONV
    image_channels: int = Field(default=1, ge=1)
    hidden_channels: int = Field(default=32, ge=1)
    latent_channels: int = Field(default=4, ge=1)
    factor: int = Field(default=4, ge=1)  # spatial down-sampling per side
    init_identity: bool = False
    epochs: int = Field(default=20, ge=0)
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=2e-3, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    holdout_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _factor(self) -> "AutoEncoderConfig":
        if self.kind == AutoEncoderKind.CONV and self.factor != 4:
            raise ValueError("conv autoencoder down-samples exactly twice (factor 4)")
        return self

    @property
    def spatial_factor(self) -> int:
        """Down-sampling per side actually applied (the identity codec ignores factor)."""
        return 1 if self.kind == AutoEncoderKind.IDENTITY else self.factor


class FlowObjective(str, Enum):
    LCFM = "lcfm"
    FM = "fm"


class FlowConfig(StrictModel):
    """Latent flow training constants."""

    K: int = Field(default=3, ge=1)
    delta_t: float = Field(default=0.05, gt=0.0, lt=1.0)
    alpha: float = Field(default=0.001, ge=0.0)
    sigma_min: float = Field(default=1e-5, ge=0.0, lt=0.1)
    sigma_s: float = Field(default=0.1, ge=0.0)
    beta: float = Field(default=0.001, ge=0.0, le=1.0)
    objective: FlowObjective = FlowObjective.LCFM
    # Use the segment of t + delta_t for the stop-gradient endpoint instead of t's
    own_segment_target: bool = False
    use_coarse_estimator: bool = True
    train_encoder: bool = True
    use_flow: bool = True
    field_widths: Tuple[int, int, int] = (16, 32, 64)
    coarse_width: int = Field(default=24, ge=1)
    coarse_blocks: int = Field(default=3, ge=1)
    expansion: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _warn_gap(self) -> "FlowConfig":
        if self.delta_t >= 1.0 / self.K:
            warnings.warn(
                f"delta_t={self.delta_t} is not below 1/K={1.0 / self.K:.4f}; "
                "consecutive times may span several segments",
                stacklevel=2,
            )
        return self


class RestoreConfig(StrictModel):
    """Inference settings."""

    M: int = Field(default=3, ge=1)
    # None: reuse the training sigma_s
    sigma_s: Optional[float] = Field(default=None, ge=0.0)
    seed: int = Field(default=0, ge=0)
    use_ema: bool = True
    collapse: bool = True


class OptimizerConfig(StrictModel):
    """AdamW and EMA hyper-parameters."""

    lr: float = Field(default=1e-3, gt=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.02, ge=0.0)
    ema_decay: float = Field(default=0.999, ge=0.0, lt=1.0)
    # TF-style warm-up: decay is capped at (1 + step) / (10 + step)
    ema_warmup: bool = True

    @field_validator("betas")
    @classmethod
    def _betas(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError("betas must lie in [0, 1)")
        return value


class TrainingConfig(StrictModel):
    """Flow stage schedule."""

    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0)
    hflip: bool = True
    checkpoint_every: int = Field(default=1, ge=1)


class ExperimentConfig(StrictModel):
    """Everything one run needs."""

    task_name: str = "desk"
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    autoencoder: AutoEncoderConfig = Field(default_factory=AutoEncoderConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    restore: RestoreConfig = Field(default_factory=RestoreConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    degradation: ParamRanges = Field(default_factory=ParamRanges.desk)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _channels(self) -> "ExperimentConfig":
        if self.autoencoder.image_channels != self.dataset.channels:
            raise ValueError(
                "autoencoder.image_channels must equal dataset.channels "
                f"({self.autoencoder.image_channels} != {self.dataset.channels})"
            )
        if self.dataset.image_size % self.autoencoder.spatial_factor:
            raise ValueError("dataset.image_size must be divisible by autoencoder.factor")
        if (self.dataset.image_size // self.autoencoder.spatial_factor) % 4:
            raise ValueError("latent side must be divisible by 4 for the three-level vector field")
        return self
