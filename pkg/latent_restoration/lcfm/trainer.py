"""
Joint training of the coarse estimator and the latent vector field.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import torch

from latent_restoration.degrade import random_hflip
from latent_restoration.errors import NumericError, TrainingError
from latent_restoration.latent.autoencoder import AutoEncoder
from latent_restoration.lcfm.losses import (
    FlowNets,
    dp_loss,
    l2_coarse_loss,
    sample_times,
)
from latent_restoration.lcfm.networks import CoarseEstimator, VectorField
from latent_restoration.logging import log_error, log_info, log_warning
from latent_restoration.models import EpochRecord, ExperimentConfig, LossReport
from latent_restoration.numerics import (
    OptimState,
    ParamSet,
    adamw_step,
    ema_decay_schedule,
    ema_update,
    grad,
    save_checkpoint,
)

ESTIMATOR_PREFIX = "estimator."
FIELD_PREFIX = "field."

# (hq, lq, estimator params, field params) -> (val_psnr, val_w2)
Validator = Callable[[torch.Tensor, torch.Tensor, ParamSet, ParamSet], Tuple[float, float]]


@dataclass
class TrainState:
    """Live weights, EMA shadows and optimizer moments of one run."""

    theta: ParamSet
    estimator: ParamSet
    theta_ema: ParamSet
    estimator_ema: ParamSet
    theta_opt: OptimState
    estimator_opt: OptimState
    step: int = 0

    def live(self) -> ParamSet:
        return self.estimator.merged(self.theta, ESTIMATOR_PREFIX, FIELD_PREFIX)

    def ema(self) -> ParamSet:
        return self.estimator_ema.merged(self.theta_ema, ESTIMATOR_PREFIX, FIELD_PREFIX)


def split_checkpoint(params: ParamSet) -> Tuple[ParamSet, ParamSet]:
    """Inverse of ``TrainState.live``: (estimator params, field params)."""
    return params.subset(ESTIMATOR_PREFIX), params.subset(FIELD_PREFIX)


class LCFMTrainer:
    """Trains (omega, phi) on the coarse latent loss and theta on the
    distortion-perception loss, one AdamW step each per batch, with EMA
    shadows of both.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        autoencoder: AutoEncoder,
        seed: Optional[int] = None,
        run_id: str = "",
        dtype: Optional[torch.dtype] = None,
    ):
        if not autoencoder.frozen:
            raise TrainingError("the autoencoder must be frozen before flow training")
        self.config = config
        self.flow = config.flow
        self.autoencoder = autoencoder
        self.seed = config.training.seed if seed is None else seed
        self.run_id = run_id
        self.generator = torch.Generator().manual_seed(self.seed)

        estimator = CoarseEstimator.initialize(autoencoder, self.flow, seed=self.seed, dtype=dtype)
        field = VectorField.initialize(autoencoder.latent_channels, self.flow, seed=self.seed + 1, dtype=dtype)
        self.nets = FlowNets(autoencoder=autoencoder, estimator=estimator, field=field)

        opt = config.optimizer
        self.state = TrainState(
            theta=field.params,
            estimator=estimator.params,
            theta_ema=field.params.clone(),
            estimator_ema=estimator.params.clone(),
            theta_opt=OptimState.from_config(field.params, opt),
            estimator_opt=OptimState.from_config(estimator.params, opt),
        )
        self.last_checkpoint: Optional[Path] = None

    def nets_with(self, estimator_params: ParamSet, field_params: ParamSet) -> FlowNets:
        return FlowNets(
            autoencoder=self.autoencoder,
            estimator=self.nets.estimator.with_params(estimator_params),
            field=self.nets.field.with_params(field_params),
        )

    def train_step(self, x: torch.Tensor, y: torch.Tensor) -> LossReport:
        """One joint step on a batch of HQ ``x`` and LQ ``y``.

        Raises:
            NumericError: If a loss is not finite
        """
        state = self.state
        step = state.step
        record = {}

        def l2_fn(p: ParamSet) -> torch.Tensor:
            loss = l2_coarse_loss(x, y, self.nets.estimator, self.autoencoder, p)
            record["l2"] = float(loss.detach())
            return loss

        try:
            l2_grads = grad(l2_fn, state.estimator)
        except NumericError as e:
            raise NumericError(f"coarse latent loss: {e}", step=step) from e
        if state.estimator.trainable_names:
            state.estimator = adamw_step(state.estimator, l2_grads, state.estimator_opt)

        if self.flow.use_flow:
            dtype = x.dtype
            t = sample_times(x.shape[0], self.flow.delta_t, self.generator, dtype)
            with torch.no_grad():
                z_shape = self.nets.estimator(y[:1]).shape[1:]
            eps = torch.randn((x.shape[0], *z_shape), generator=self.generator, dtype=dtype) * self.flow.sigma_s
            # theta trains against the estimator weights from before this step
            estimator_before = self.nets.estimator.params

            def dp_fn(p: ParamSet) -> torch.Tensor:
                nets = FlowNets(
                    self.autoencoder,
                    self.nets.estimator.with_params(estimator_before),
                    self.nets.field.with_params(p),
                )
                terms = dp_loss((x, y), nets, self.flow, t=t, eps=eps)
                record["lcfm"] = float(terms.lcfm.detach())
                record["mse"] = float(terms.mse.detach())
                record["dp"] = float(terms.total.detach())
                return terms.total

            try:
                dp_grads = grad(dp_fn, state.theta)
            except NumericError as e:
                raise NumericError(f"distortion-perception loss: {e}", step=step) from e
            state.theta = adamw_step(state.theta, dp_grads, state.theta_opt)
        else:
            record.update(lcfm=0.0, mse=0.0, dp=0.0)

        decay = ema_decay_schedule(step, self.config.optimizer.ema_decay, self.config.optimizer.ema_warmup)
        state.theta_ema = ema_update(state.theta_ema, state.theta, decay)
        state.estimator_ema = ema_update(state.estimator_ema, state.estimator, decay)
        state.step += 1

        self.nets.estimator.params = state.estimator
        self.nets.field.params = state.theta
        return LossReport(
            l2=record["l2"], lcfm=record["lcfm"], mse=record["mse"], dp=record["dp"],
            total=record["l2"] + record["dp"], step=step,
        )

    def save(self, run_dir: Path, epoch: int) -> Path:
        metadata = {
            "flow": self.config.flow.model_dump(mode="json"),
            "autoencoder": self.autoencoder.config.model_dump(mode="json"),
            "epoch": epoch,
            "step": self.state.step,
            "seed": self.seed,
        }
        save_checkpoint(run_dir / "live.ckpt", self.state.live(), metadata)
        self.last_checkpoint = save_checkpoint(run_dir / "ema.ckpt", self.state.ema(), metadata)
        log_info(
            "Checkpoints written", run_id=self.run_id, stage="train",
            epoch=epoch, step=self.state.step, path=str(run_dir),
        )
        return self.last_checkpoint

    def fit(
        self,
        train: Tuple[torch.Tensor, torch.Tensor],
        val: Optional[Tuple[torch.Tensor, torch.Tensor]] = None,
        epochs: Optional[int] = None,
        run_dir: Optional[Path] = None,
        validator: Optional[Validator] = None,
    ) -> List[EpochRecord]:
        """Train for ``epochs`` passes over ``train`` = (hq, lq).

        After every epoch the EMA weights are scored on ``val`` with
        ``validator`` and checkpoints are written to ``run_dir`` on the
        configured cadence (always after the final epoch, and once up front).

        Raises:
            TrainingError: If a loss stops being finite; the last good
                checkpoint stays on disk
        """
        training = self.config.training
        epochs = training.epochs if epochs is None else epochs
        hq, lq = train
        n = hq.shape[0]
        records: List[EpochRecord] = []
        if self.flow.delta_t >= 1.0 / self.flow.K:
            log_warning("delta_t is not below 1/K", run_id=self.run_id, stage="train", delta_t=self.flow.delta_t, K=self.flow.K)

        if run_dir is not None:
            self.save(run_dir, epoch=-1)

        for epoch in range(epochs):
            perm = torch.randperm(n, generator=self.generator)
            sums = {"l2": 0.0, "lcfm": 0.0, "mse": 0.0, "dp": 0.0}
            batches = 0
            for start in range(0, n, training.batch_size):
                idx = perm[start:start + training.batch_size]
                x, y = hq[idx], lq[idx]
                if training.hflip:
                    x, y = random_hflip(x, y, self.generator)
                try:
                    report = self.train_step(x, y)
                except NumericError as e:
                    log_error(
                        "Training diverged", run_id=self.run_id, stage="train",
                        epoch=epoch, step=self.state.step, exc_info=True,
                    )
                    raise TrainingError(str(e), last_checkpoint=self.last_checkpoint) from e
                for key in sums:
                    sums[key] += getattr(report, key)
                batches += 1

            val_psnr, val_w2 = float("nan"), float("nan")
            if val is not None and validator is not None:
                val_psnr, val_w2 = validator(val[0], val[1], self.state.estimator_ema, self.state.theta_ema)
            record = EpochRecord(
                epoch=epoch,
                **{key: total / max(batches, 1) for key, total in sums.items()},
                val_psnr=val_psnr,
                val_w2=val_w2,
            )
            records.append(record)
            log_info(
                "Epoch finished", run_id=self.run_id, stage="train",
                **record.model_dump(),
            )
            if run_dir is not None and ((epoch + 1) % training.checkpoint_every == 0 or epoch == epochs - 1):
                self.save(run_dir, epoch=epoch)
        return records
