import numpy as np
import pytest
import torch
from scipy import fft

from latent_restoration.cli.datasets import generate_image
from latent_restoration.degrade import (
    add_noise,
    block_dct,
    block_idct,
    dct_compress,
    degrade,
    degrade_task,
    gaussian_blur,
    gaussian_kernel,
    inpaint_mask,
    quality_step,
    random_hflip,
    resample,
    sample_params,
    task_ranges,
)
from latent_restoration.errors import ContractViolation, NumericError
from latent_restoration.evaluation import psnr
from latent_restoration.models import DegradationParams, GeneratorKind, ParamRanges, TaskKind


def _chart(size=32, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = 0.5 + 0.3 * np.sin(6 * xx) * np.cos(4 * yy)
    return np.clip(base + 0.05 * rng.standard_normal((size, size)), 0, 1)[:, :, None]


class TestBlur:
    def test_tiny_sigma_is_identity(self):
        x = _chart()
        assert np.array_equal(gaussian_blur(x, 1e-7, 9), x)

    def test_impulse_gives_kernel(self):
        x = np.zeros((15, 15, 1))
        x[7, 7] = 1.0
        out = gaussian_blur(x, 1.5, 9)
        k = gaussian_kernel(1.5, 9)
        assert np.allclose(out[3:12, 3:12, 0], k, atol=1e-14)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)

    def test_kernel_sums_to_one(self):
        for sigma in (0.1, 1.0, 15.0):
            assert abs(gaussian_kernel(sigma, 41).sum() - 1.0) < 1e-12

    def test_constant_image_preserved(self):
        x = np.full((12, 12, 1), 0.3)
        assert np.allclose(gaussian_blur(x, 4.0, 41), 0.3, atol=1e-12)

    def test_negative_sigma(self):
        with pytest.raises(ContractViolation):
            gaussian_blur(_chart(), -1.0, 9)


class TestResample:
    def test_unit_factor_is_identity(self):
        x = _chart()
        assert np.array_equal(resample(x, 1.0, "down"), x)

    def test_constant_stays_constant(self):
        x = np.full((16, 16, 1), 0.7)
        down = resample(x, 3.3, "down")
        assert down.shape == (4, 4, 1)
        assert np.allclose(down, 0.7)
        assert np.allclose(resample(down, 3.3, "up", out_shape=(16, 16)), 0.7)

    def test_checkerboard_averages(self):
        x = (np.indices((4, 4)).sum(axis=0) % 2).astype(np.float64)[:, :, None]
        round_trip = resample(resample(x, 2, "down"), 2, "up", out_shape=(4, 4))
        assert np.allclose(round_trip, 0.5)

    def test_too_small(self):
        with pytest.raises(ContractViolation):
            resample(_chart(8), 9.0, "down")


class TestNoise:
    def test_zero_delta(self):
        x = _chart()
        assert np.array_equal(add_noise(x, 0.0, 1), x)

    def test_seeded(self):
        x = _chart()
        assert np.array_equal(add_noise(x, 0.1, 5), add_noise(x, 0.1, 5))

    def test_sample_std(self):
        x = np.zeros((1000, 1000, 1))
        assert np.std(add_noise(x, 0.05, 0)) == pytest.approx(0.05, rel=0.01)

    def test_not_clipped(self):
        assert add_noise(np.ones((8, 8, 1)), 0.5, 0).max() > 1.0


class TestCompress:
    def test_quality_step(self):
        assert quality_step(50, 16) == 16
        assert quality_step(100, 2) == 1
        with pytest.raises(ContractViolation):
            quality_step(0)

    def test_unit_step_on_integer_grid(self):
        rng = np.random.default_rng(0)
        coeffs = rng.integers(-20, 21, size=(2, 2, 1, 8, 8)).astype(np.float64)
        coeffs[..., 0, 0] = 1024.0
        x = block_idct(coeffs) / 255.0
        assert np.allclose(dct_compress(x, 100, base=2.0), x, atol=1e-5)

    def test_constant_exact(self):
        x = np.full((13, 10, 1), 0.42)
        for q in (1, 30, 100):
            assert np.allclose(dct_compress(x, q), x, atol=1e-12)

    def test_transform_round_trip(self):
        x = _chart(16)
        assert np.allclose(block_idct(block_dct(x)), x, atol=1e-6)

    def test_dct_is_orthonormal_per_block(self):
        x = _chart(8)
        coeffs = block_dct(x)
        assert np.allclose(coeffs[0, 0, 0], fft.dctn(x[:, :, 0], norm="ortho"))

    def test_error_non_increasing_over_nested_steps(self):
        # steps 32, 16, 8: each grid contains the coarser one
        for seed in range(20):
            x = _chart(16, seed)
            errors = [np.mean((dct_compress(x, q) - x) ** 2) for q in (25, 50, 100)]
            assert all(a >= b - 1e-15 for a, b in zip(errors, errors[1:]))

    def test_corpus_mean_error_non_increasing_in_quality(self):
        # single images may tick up between non-nested steps; the corpus mean may not
        corpus = [generate_image(GeneratorKind.GAUSSIAN_BLOBS, 16, 1, seed) for seed in range(20)]
        errors = [
            np.mean([np.mean((dct_compress(x, q) - x) ** 2) for x in corpus])
            for q in range(1, 101)
        ]
        for q, (a, b) in enumerate(zip(errors, errors[1:]), start=1):
            assert b <= a + 1e-12, f"mean error rises from q={q} to q={q + 1}"

    def test_quality_range(self):
        with pytest.raises(ContractViolation):
            dct_compress(_chart(), 101)


class TestPipeline:
    def test_identity_params(self):
        x = _chart()
        p = DegradationParams(sigma=0.0, r=1.0, delta=0.0, q=100, kernel_size=9, quant_base=2.0)
        assert np.allclose(degrade(x, p, 0), x, atol=3.0 / 255.0)
        p0 = p.model_copy(update={"quant_base": 0.0})
        assert np.array_equal(degrade(x, p0, 0), x)

    def test_deterministic_and_shaped(self):
        x = _chart(20)
        p = DegradationParams(sigma=2.0, r=3.0, delta=0.05, q=40, kernel_size=9)
        y = degrade(x, p, 7)
        assert y.shape == x.shape
        assert np.array_equal(y, degrade(x, p, 7))
        assert y.min() >= 0.0 and y.max() <= 1.0

    def test_factor_beyond_image_size(self):
        x = _chart(16)
        p = DegradationParams(sigma=1.0, r=31.0, delta=0.01, q=60, kernel_size=9)
        y = degrade(x, p, 0)
        assert y.shape == x.shape
        assert np.allclose(y, y.mean(), atol=0.1)

    def test_debug_mode_flags_non_finite_output(self, debug_numerics):
        x = _chart(16)
        x[3, 3, 0] = np.nan
        p = DegradationParams(sigma=1.0, r=2.0, delta=0.0, q=60, kernel_size=9)
        with pytest.raises(NumericError, match="degraded image"):
            degrade(x, p, 0)

    def test_stronger_downsampling_hurts(self):
        i, j = np.mgrid[0:32, 0:32]
        x = (0.5 + 0.4 * np.sin(2 * np.pi * i / 8) * np.sin(2 * np.pi * j / 8))[:, :, None]
        p4 = DegradationParams(sigma=0.0, r=4.0, delta=0.0, q=100, kernel_size=9, quant_base=0.0)
        p2 = p4.model_copy(update={"r": 2.0})
        assert psnr(x, degrade(x, p4, 0)) < psnr(x, degrade(x, p2, 0))


class TestSampling:
    def test_degenerate_range(self):
        ranges = ParamRanges(sigma=(2.0, 2.0), r=(3.0, 3.0), delta=(0.1, 0.1), q=(40, 40), kernel_size=9)
        p = sample_params(ranges, 123)
        assert (p.sigma, p.r, p.delta, p.q) == (2.0, 3.0, 0.1, 40)

    def test_uniform_mean(self):
        ranges = ParamRanges()
        sigmas = [sample_params(ranges, s).sigma for s in range(10000)]
        assert np.mean(sigmas) == pytest.approx(7.55, rel=0.02)

    def test_same_seed(self):
        assert sample_params(ParamRanges(), 3) == sample_params(ParamRanges(), 3)

    def test_identity_ranges_leave_images_alone(self):
        x = _chart(16)
        y, _ = degrade_task(x, TaskKind.BLIND, ParamRanges.identity(), 11)
        assert np.array_equal(y, x)

    def test_super_resolution_preset(self):
        ranges = task_ranges(TaskKind.SUPER_RESOLUTION, ParamRanges(), sr_factor=4.0)
        p = sample_params(ranges, 0)
        assert p.r == 4.0 and p.sigma == 0.0 and p.delta == 0.0

    def test_inpainting_drops_pixels(self):
        x = np.ones((32, 32, 1))
        y, _ = degrade_task(x, TaskKind.INPAINTING, ParamRanges(), 2, mask_fraction=0.5)
        assert 0.3 < float((y == 0).mean()) < 0.7
        assert inpaint_mask((4, 4), 0.0, 0).all()


def test_random_hflip_flips_pairs_jointly():
    hq = torch.arange(2 * 1 * 2 * 3, dtype=torch.float32).reshape(2, 1, 2, 3)
    lq = hq + 100
    g = torch.Generator().manual_seed(0)
    out_hq, out_lq = random_hflip(hq, lq, g)
    assert torch.equal(out_lq - out_hq, torch.full_like(hq, 100.0))
    for i in range(2):
        assert torch.equal(out_hq[i], hq[i]) or torch.equal(out_hq[i], hq[i].flip(-1))
