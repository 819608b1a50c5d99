"""
Report records emitted by training, restoration and evaluation.
"""

import math
from typing import ClassVar, List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


class MetricsReport(BaseModel):
    """Distortion and perception metrics over a set of restored images."""

    mse: float = Field(ge=0.0)
    psnr: float
    ssim: Optional[float] = Field(default=None, ge=-1.0, le=1.0)  # None when images are below the window size
    w2_empirical: float = Field(ge=0.0)
    frechet: float = Field(ge=0.0)
    n_images: int = Field(ge=0)
    n_transport: int = Field(ge=0)  # samples used by w2_empirical
    label: str = ""

    CSV_FIELDS: ClassVar[Tuple[str, ...]] = ("label", "mse", "psnr", "ssim", "w2_empirical", "frechet", "n_images", "n_transport")

    def csv_row(self) -> List[str]:
        return [self.label] + [repr(getattr(self, name)) for name in self.CSV_FIELDS[1:]]


class BoundReport(BaseModel):
    """Both sides of the Wasserstein-2 bound with the sampled constants behind them."""

    delta_ed: float = Field(ge=0.0)
    delta_v: float = Field(ge=0.0)
    lip_decoder: float = Field(ge=0.0)
    lip_field: float = Field(ge=0.0)
    constant_c: float = Field(ge=0.0)
    lhs: float = Field(ge=0.0)
    rhs: float = Field(ge=0.0)
    holds: bool
    n_pairs: int = Field(ge=0)
    # Lipschitz constants are sampled lower bounds, so the check is empirical only
    note: str = "empirical: constants are sampled estimates"

    @model_validator(mode="after")
    def _rhs_floor(self) -> "BoundReport":
        if self.rhs + 1e-12 < math.sqrt(self.delta_ed):
            raise ValueError("rhs must be at least sqrt(delta_ed)")
        return self


class LossReport(BaseModel):
    """Per-term scalars of one joint training step."""

    l2: float
    lcfm: float
    mse: float
    dp: float
    total: float
    step: int = 0


class EpochRecord(BaseModel):
    """One row of the per-epoch metrics CSV."""

    epoch: int
    l2: float
    lcfm: float
    mse: float
    dp: float
    val_psnr: float
    val_w2: float

    CSV_FIELDS: ClassVar[Tuple[str, ...]] = ("epoch", "l2", "lcfm", "mse", "dp", "val_psnr", "val_w2")

    def csv_row(self) -> List[str]:
        return [str(self.epoch)] + [repr(getattr(self, name)) for name in self.CSV_FIELDS[1:]]


class AblationRow(BaseModel):
    """One setting of an ablation sweep."""

    key: str
    value: str
    seed: int
    psnr: float
    lq_psnr: float
    frechet: float
    ssim: Optional[float] = None
    nfe: int
    extra: Optional[str] = None

    CSV_FIELDS: ClassVar[Tuple[str, ...]] = ("key", "value", "seed", "psnr", "lq_psnr", "frechet", "ssim", "nfe")

    def csv_row(self) -> List[str]:
        return [self.key, self.value, str(self.seed)] + [
            repr(getattr(self, name)) for name in self.CSV_FIELDS[3:]
        ]
