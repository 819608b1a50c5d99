"""
Inference: coarse latent estimate, noisy initial point, few-step Euler
integration of the vector field, decode.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Tuple, Union

import torch

from latent_restoration.errors import ContractViolation
from latent_restoration.latent.autoencoder import AutoEncoder
from latent_restoration.lcfm.networks import CoarseEstimator, TimeLike, VectorField
from latent_restoration.lcfm.trainer import LCFMTrainer, split_checkpoint
from latent_restoration.logging import log_info, log_warning
from latent_restoration.models import AutoEncoderKind, FlowConfig, FlowObjective, RestoreConfig
from latent_restoration.numerics import ParamSet, check_finite, load_checkpoint, require_finite

FieldFn = Callable[[torch.Tensor, TimeLike], torch.Tensor]

LATENT_FM_STEPS = 25


@dataclass
class RestorationPipeline:
    """A frozen autoencoder with trained estimator and field weights.

    ``estimator`` and ``field`` carry the live weights; the EMA shadows are
    kept alongside and selected with ``weights(use_ema=True)``.
    """

    autoencoder: AutoEncoder
    estimator: CoarseEstimator
    field: VectorField
    flow: FlowConfig
    estimator_ema: Optional[ParamSet] = None
    field_ema: Optional[ParamSet] = None

    def weights(self, use_ema: bool = True) -> Tuple[CoarseEstimator, VectorField]:
        if not use_ema or self.estimator_ema is None or self.field_ema is None:
            return self.estimator, self.field
        return self.estimator.with_params(self.estimator_ema), self.field.with_params(self.field_ema)

    @classmethod
    def from_trainer(cls, trainer: LCFMTrainer) -> "RestorationPipeline":
        state = trainer.state
        return cls(
            autoencoder=trainer.autoencoder,
            estimator=trainer.nets.estimator.with_params(state.estimator),
            field=trainer.nets.field.with_params(state.theta),
            flow=trainer.flow,
            estimator_ema=state.estimator_ema,
            field_ema=state.theta_ema,
        )

    @classmethod
    def from_checkpoints(
        cls,
        autoencoder: Union[AutoEncoder, str, Path],
        live_path: Union[str, Path],
        ema_path: Optional[Union[str, Path]] = None,
    ) -> "RestorationPipeline":
        """Rebuild a pipeline from a run's checkpoints.

        Raises:
            ContractViolation: If the checkpoints do not match the architecture
                recorded in their metadata
        """
        if not isinstance(autoencoder, AutoEncoder):
            autoencoder, _ = AutoEncoder.load(autoencoder)
        live, metadata = load_checkpoint(live_path)
        if "flow" not in metadata:
            raise ContractViolation(f"checkpoint {live_path} carries no flow configuration")
        flow = FlowConfig.model_validate(metadata["flow"])
        estimator = CoarseEstimator.initialize(autoencoder, flow)
        field = VectorField.initialize(autoencoder.latent_channels, flow)

        def bind(params: ParamSet) -> Tuple[CoarseEstimator, VectorField]:
            est_params, field_params = split_checkpoint(params)
            if est_params.shapes() != estimator.params.shapes() or field_params.shapes() != field.params.shapes():
                raise ContractViolation("checkpoint tensors do not match the recorded architecture")
            return estimator.with_params(est_params), field.with_params(field_params)

        live_estimator, live_field = bind(live)
        estimator_ema = field_ema = None
        if ema_path is not None:
            ema, _ = load_checkpoint(ema_path)
            ema_estimator, ema_field = bind(ema)
            estimator_ema, field_ema = ema_estimator.params, ema_field.params
        return cls(autoencoder, live_estimator, live_field, flow, estimator_ema, field_ema)

    @classmethod
    def from_run_dir(cls, run_dir: Union[str, Path]) -> "RestorationPipeline":
        run_dir = Path(run_dir)
        return cls.from_checkpoints(run_dir / "autoencoder.ckpt", run_dir / "live.ckpt", run_dir / "ema.ckpt")


def euler_solve(z0: torch.Tensor, v: FieldFn, M: int) -> torch.Tensor:
    """Forward Euler from t = 0 to t = 1 on the grid t_k = k / M.

    Raises:
        ContractViolation: If M < 1
        NumericError: If an intermediate state is not finite
    """
    if M < 1:
        raise ContractViolation(f"Euler step count must be at least 1, got {M}")
    dt = 1.0 / M
    z = check_finite(z0, "Euler start")
    for k in range(M):
        z = z + dt * v(z, k / M)
        require_finite(z, "Euler state", step=k)
    return z


def initial_point(
    y: torch.Tensor,
    estimator: CoarseEstimator,
    sigma_s: float,
    generator: torch.Generator,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """(z, z0): the coarse latent and the noised starting point."""
    z = estimator(y)
    eps = torch.randn(z.shape, generator=generator, dtype=z.dtype)
    return z, z + sigma_s * eps


def restore(
    y: torch.Tensor,
    pipeline: RestorationPipeline,
    cfg: Optional[RestoreConfig] = None,
    run_id: str = "",
) -> torch.Tensor:
    """Restore a batch of LQ images (N, C, H, W).

    The output has the shape of ``y``, lies in [0, 1] and depends only on
    ``(y, cfg.seed)``. With the flow disabled it is the decoded coarse
    estimate.
    """
    cfg = cfg or RestoreConfig()
    flow = pipeline.flow
    estimator, field = pipeline.weights(cfg.use_ema)
    sigma_s = flow.sigma_s if cfg.sigma_s is None else cfg.sigma_s
    if flow.use_flow and flow.objective == FlowObjective.LCFM and cfg.M != flow.K:
        log_warning(
            "Euler steps differ from the trained segment count",
            run_id=run_id, stage="restore", M=cfg.M, K=flow.K,
        )
    generator = torch.Generator().manual_seed(cfg.seed)

    with torch.no_grad():
        if not flow.use_flow:
            x_hat = pipeline.autoencoder.decode(estimator(y), clip=True)
        else:
            _, z0 = initial_point(y, estimator, sigma_s, generator)
            if cfg.collapse:
                field = field.collapsed()
            x_hat = pipeline.autoencoder.decode(euler_solve(z0, field, cfg.M), clip=True)
    if x_hat.shape != y.shape:
        raise ContractViolation(f"restored shape {tuple(x_hat.shape)} differs from input {tuple(y.shape)}")
    log_info("Restored batch", run_id=run_id, stage="restore", images=int(y.shape[0]), M=cfg.M, sigma_s=sigma_s)
    return x_hat


def baseline_pixel_cfm(
    y: torch.Tensor,
    pipeline: RestorationPipeline,
    cfg: Optional[RestoreConfig] = None,
    run_id: str = "",
) -> torch.Tensor:
    """Restoration with the flow running directly in pixel space.

    Raises:
        ContractViolation: If the pipeline was not trained over the identity codec
    """
    if pipeline.autoencoder.config.kind != AutoEncoderKind.IDENTITY:
        raise ContractViolation("pixel-space baseline requires an identity autoencoder")
    return restore(y, pipeline, cfg, run_id=run_id)


def baseline_latent_fm(
    y: torch.Tensor,
    pipeline: RestorationPipeline,
    cfg: Optional[RestoreConfig] = None,
    steps: int = LATENT_FM_STEPS,
    run_id: str = "",
) -> torch.Tensor:
    """Latent flow matching without consistency terms, sampled with ``steps`` Euler steps.

    Raises:
        ContractViolation: If the field was trained with the consistency objective
    """
    if pipeline.flow.objective != FlowObjective.FM:
        raise ContractViolation("latent FM baseline requires a field trained with objective 'fm'")
    cfg = (cfg or RestoreConfig()).model_copy(update={"M": steps})
    return restore(y, pipeline, cfg, run_id=run_id)


def nfe_sweep(
    y: torch.Tensor,
    pipeline: RestorationPipeline,
    steps: Iterable[int],
    cfg: Optional[RestoreConfig] = None,
    run_id: str = "",
) -> Dict[int, torch.Tensor]:
    """Restorations of ``y`` for each Euler step count, same seed throughout."""
    cfg = cfg or RestoreConfig()
    return {m: restore(y, pipeline, cfg.model_copy(update={"M": m}), run_id=run_id) for m in steps}
