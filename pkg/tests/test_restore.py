import math

import numpy as np
import pytest
import torch

from latent_restoration.cli import synth_dataset
from latent_restoration.errors import ContractViolation, NumericError
from latent_restoration.evaluation import psnr_per_image
from latent_restoration.latent import AutoEncoder
from latent_restoration.lcfm import LCFMTrainer
from latent_restoration.models import DatasetSpec, ExperimentConfig, FlowConfig, RestoreConfig, TrainingConfig
from latent_restoration.numerics import save_checkpoint
from latent_restoration.restore import (
    RestorationPipeline,
    baseline_latent_fm,
    baseline_pixel_cfm,
    euler_solve,
    initial_point,
    nfe_sweep,
    restore,
)


def _config(small_flow, autoencoder=None, **flow):
    return ExperimentConfig(
        dataset=DatasetSpec(image_size=8, count=8, val_count=4),
        autoencoder=autoencoder or {"kind": "linear", "latent_channels": 4, "factor": 2, "init_identity": True, "epochs": 0},
        flow=FlowConfig.model_validate({**small_flow.model_dump(), **flow}),
        training=TrainingConfig(batch_size=4),
    )


def _trainer(config, steps=0):
    trainer = LCFMTrainer(config, AutoEncoder(config.autoencoder).freeze())
    g = torch.Generator().manual_seed(0)
    for _ in range(steps):
        x = torch.rand((4, 1, 8, 8), generator=g)
        trainer.train_step(x, (x + 0.1 * torch.randn(x.shape, generator=g)).clamp(0, 1))
    return trainer


def _lq(n=3, seed=1):
    return torch.rand((n, 1, 8, 8), generator=torch.Generator().manual_seed(seed))


class TestEuler:
    def test_constant_field(self, float64):
        z0 = torch.randn(2, 3)
        c = torch.full_like(z0, 0.7)
        assert torch.allclose(euler_solve(z0, lambda z, t: c, 7), z0 + c)

    def test_linear_field(self, float64):
        z0 = torch.randn(2, 3)
        assert torch.allclose(euler_solve(z0, lambda z, t: z, 1), 2 * z0)
        ratio = euler_solve(z0, lambda z, t: z, 100) / z0
        assert torch.allclose(ratio, torch.full_like(ratio, math.e), rtol=0.01)

    def test_time_grid(self):
        seen = []
        euler_solve(torch.zeros(1), lambda z, t: seen.append(t) or z, 4)
        assert seen == [0.0, 0.25, 0.5, 0.75]

    def test_rejects_zero_steps(self):
        with pytest.raises(ContractViolation):
            euler_solve(torch.zeros(1), lambda z, t: z, 0)

    def test_non_finite_state(self):
        with pytest.raises(NumericError):
            euler_solve(torch.ones(1), lambda z, t: z / 0.0, 2)


class TestRestore:
    def test_zero_field_decodes_the_coarse_estimate(self, small_flow):
        trainer = _trainer(_config(small_flow), steps=1)
        pipeline = RestorationPipeline.from_trainer(trainer)
        zeros = {n: torch.zeros_like(t) for n, t in pipeline.field.params.items()}
        pipeline.field = pipeline.field.with_params(pipeline.field.params.replace(zeros))
        y = _lq()
        cfg = RestoreConfig(sigma_s=0.0, use_ema=False)
        expected = pipeline.autoencoder.decode(pipeline.estimator(y), clip=True)
        assert torch.equal(restore(y, pipeline, cfg), expected)

    def test_output_shape_and_range(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow), steps=1))
        y = _lq()
        x_hat = restore(y, pipeline)
        assert x_hat.shape == y.shape
        assert x_hat.min() >= 0.0 and x_hat.max() <= 1.0

    def test_seeded(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow), steps=1))
        y = _lq()
        a = restore(y, pipeline, RestoreConfig(seed=4))
        assert torch.equal(a, restore(y, pipeline, RestoreConfig(seed=4)))
        assert not torch.equal(a, restore(y, pipeline, RestoreConfig(seed=5)))

    def test_ema_matches_live_before_training(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow)))
        y = _lq()
        live = restore(y, pipeline, RestoreConfig(use_ema=False))
        assert torch.equal(live, restore(y, pipeline, RestoreConfig(use_ema=True)))

    def test_collapsed_field_gives_same_images(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow), steps=2))
        y = _lq()
        folded = restore(y, pipeline, RestoreConfig(collapse=True))
        assert torch.allclose(folded, restore(y, pipeline, RestoreConfig(collapse=False)), atol=1e-5)

    def test_without_flow(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow, use_flow=False), steps=1))
        y = _lq()
        estimator, _ = pipeline.weights(use_ema=True)
        expected = pipeline.autoencoder.decode(estimator(y), clip=True)
        assert torch.equal(restore(y, pipeline), expected)

    def test_initial_point_noise_scale(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow)))
        z, z0 = initial_point(_lq(), pipeline.estimator, 0.0, torch.Generator().manual_seed(0))
        assert torch.equal(z, z0)

    def test_nfe_sweep(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow), steps=1))
        y = _lq()
        out = nfe_sweep(y, pipeline, [1, 3])
        assert sorted(out) == [1, 3]
        assert torch.equal(out[3], restore(y, pipeline, RestoreConfig(M=3)))


class TestCheckpoints:
    def test_round_trip_through_run_dir(self, tmp_path, small_flow):
        trainer = _trainer(_config(small_flow), steps=2)
        trainer.save(tmp_path, epoch=0)
        trainer.autoencoder.save(tmp_path / "autoencoder.ckpt")
        loaded = RestorationPipeline.from_run_dir(tmp_path)
        original = RestorationPipeline.from_trainer(trainer)
        y = _lq()
        for use_ema in (True, False):
            cfg = RestoreConfig(use_ema=use_ema)
            assert torch.allclose(restore(y, loaded, cfg), restore(y, original, cfg), atol=1e-6)

    def test_checkpoint_without_flow_config(self, tmp_path, small_flow):
        trainer = _trainer(_config(small_flow))
        path = save_checkpoint(tmp_path / "live.ckpt", trainer.state.live())
        with pytest.raises(ContractViolation):
            RestorationPipeline.from_checkpoints(trainer.autoencoder, path)


class TestBaselines:
    def test_pixel_baseline_needs_identity_codec(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow)))
        with pytest.raises(ContractViolation):
            baseline_pixel_cfm(_lq(), pipeline)

    def test_pixel_baseline(self, small_flow):
        config = _config(small_flow, autoencoder={"kind": "identity"})
        pipeline = RestorationPipeline.from_trainer(_trainer(config, steps=1))
        y = _lq()
        assert baseline_pixel_cfm(y, pipeline).shape == y.shape

    def test_latent_fm_baseline_needs_fm_objective(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow)))
        with pytest.raises(ContractViolation):
            baseline_latent_fm(_lq(), pipeline)

    def test_latent_fm_baseline(self, small_flow):
        pipeline = RestorationPipeline.from_trainer(_trainer(_config(small_flow, objective="fm"), steps=1))
        y = _lq()
        out = baseline_latent_fm(y, pipeline, steps=5)
        assert torch.equal(out, restore(y, pipeline, RestoreConfig(M=5)))


class TestTrainedToy:
    def test_denoiser_beats_its_input(self):
        # noise-only degradation over an identity codec; one segment fit by pixel MSE
        config = ExperimentConfig.model_validate({
            "task_name": "toy-denoise",
            "dataset": {"image_size": 8, "count": 256, "val_count": 64, "generator": "smooth-noise"},
            "autoencoder": {"kind": "linear", "latent_channels": 4, "factor": 2, "init_identity": True, "epochs": 0},
            "flow": {
                "K": 1, "sigma_s": 0.0, "beta": 1.0,
                "field_widths": [8, 16, 16], "coarse_width": 8, "coarse_blocks": 1, "expansion": 2,
            },
            "restore": {"M": 1},
            "optimizer": {"lr": 3e-3},
            "training": {"epochs": 30, "batch_size": 32},
            "degradation": {
                "sigma": [0.0, 0.0], "r": [1.0, 1.0], "delta": [0.15, 0.15], "q": [100, 100],
                "kernel_size": 9, "quant_base": 0.0,
            },
        })
        hq, lq = synth_dataset(config.dataset, config.degradation, "train").to_tensors()
        val_hq, val_lq = synth_dataset(config.dataset, config.degradation, "val").to_tensors()
        trainer = LCFMTrainer(config, AutoEncoder(config.autoencoder).freeze())
        trainer.fit((hq, lq))

        x_hat = restore(val_lq, RestorationPipeline.from_trainer(trainer), config.restore)
        restored = np.median(psnr_per_image(val_hq, x_hat))
        degraded = np.median(psnr_per_image(val_hq, val_lq))
        assert restored > degraded
