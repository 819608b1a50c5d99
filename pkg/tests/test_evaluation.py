import math

import numpy as np
import pytest
import torch

from latent_restoration.errors import ContractViolation, InsufficientSamplesError
from latent_restoration.evaluation import (
    estimate_lipschitz,
    evaluate_pairs,
    fit_gaussian,
    frechet,
    gaussian_restoration_toy,
    lipschitz_ratios,
    psnr,
    ssim,
    translation_toy,
    verify_bound,
    w2_empirical,
    w2_gaussian,
)


class TestPSNR:
    def test_known_values(self):
        x = np.zeros((4, 4))
        assert psnr(x, np.full((4, 4), 0.1)) == pytest.approx(20.0)
        assert psnr(x, np.ones((4, 4))) == pytest.approx(0.0)

    def test_identical_images_hit_the_cap(self):
        x = np.random.default_rng(0).random((8, 8))
        assert psnr(x, x) == 100.0

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSSIM:
    def test_identical(self):
        x = np.random.default_rng(0).random((24, 24))
        assert ssim(x, x) == pytest.approx(1.0)

    def test_constant_images(self):
        # zero variance leaves only the luminance term
        a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.6)
        c1 = 0.01 ** 2
        expected = (2 * 0.2 * 0.6 + c1) / (0.2 ** 2 + 0.6 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-6)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a))
        assert -1.0 <= ssim(a, b) < 1.0

    def test_small_image(self):
        with pytest.raises(ContractViolation):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestTransport:
    def test_identical_sets(self):
        a = np.random.default_rng(0).normal(size=(50, 3))
        assert w2_empirical(a, a[::-1]) == pytest.approx(0.0, abs=1e-12)

    def test_shift(self):
        a = np.random.default_rng(0).normal(size=(40, 2))
        assert w2_empirical(a, a + np.array([3.0, 4.0])) == pytest.approx(5.0)

    def test_one_dimensional_gaussians(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(0.0, 1.0, 2000), rng.normal(2.0, 1.0, 2000)
        assert w2_empirical(a, b) == pytest.approx(2.0, rel=0.05)

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b, c = (rng.normal(size=(8, 3)) * rng.uniform(0.5, 2.0) for _ in range(3))
            ab, bc, ac = w2_empirical(a, b), w2_empirical(b, c), w2_empirical(a, c)
            assert ac <= ab + bc + 1e-9
            assert ab == pytest.approx(w2_empirical(b, a), abs=1e-12)
            assert ab > 0.0

    def test_empirical_distance_approaches_closed_form(self):
        rng = np.random.default_rng(11)
        mean, cov = np.array([1.0, -0.5]), np.array([[1.0, 0.3], [0.3, 0.5]])
        exact = w2_gaussian(mean, cov, mean, cov)
        errors = []
        for n in (100, 500, 2000):
            samples = [
                abs(w2_empirical(rng.multivariate_normal(mean, cov, n), rng.multivariate_normal(mean, cov, n)) - exact)
                for _ in range(3)
            ]
            errors.append(np.median(samples))
        assert errors[0] > errors[1] > errors[2]

    def test_size_checks(self):
        with pytest.raises(ContractViolation):
            w2_empirical(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(ContractViolation):
            w2_empirical(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_gaussian_closed_form(self):
        assert w2_gaussian([0, 0], np.eye(2), [1, 2], np.eye(2)) == pytest.approx(math.sqrt(5.0))
        assert w2_gaussian([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(1.0)

    def test_gaussian_rejects_bad_covariance(self):
        with pytest.raises(ContractViolation):
            w2_gaussian([0, 0], [[1.0, 2.0], [0.0, 1.0]], [0, 0], np.eye(2))
        with pytest.raises(ContractViolation):
            w2_gaussian([0, 0], [[1.0, 0.0], [0.0, -1.0]], [0, 0], np.eye(2))

    def test_frechet_of_a_shift(self):
        a = np.random.default_rng(2).normal(size=(500, 3))
        d = np.array([0.5, -1.0, 2.0])
        assert frechet(a, a + d) == pytest.approx(float(d @ d), rel=1e-6)

    def test_frechet_is_rotation_invariant(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(300, 2)), rng.normal(1.0, 2.0, size=(300, 2))
        angle = 0.7
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        assert frechet(a @ rot.T, b @ rot.T) == pytest.approx(frechet(a, b), rel=1e-6)

    def test_shrinkage_for_few_points(self):
        _, cov = fit_gaussian(np.random.default_rng(0).normal(size=(3, 5)))
        assert np.linalg.eigvalsh(cov).min() > 0.0

    def test_ridge_only_below_full_rank(self):
        rng = np.random.default_rng(1)
        few, many = rng.normal(size=(4, 5)), rng.normal(size=(6, 5))
        assert np.allclose(fit_gaussian(few)[1], np.cov(few, rowvar=False) + 1e-6 * np.eye(5), atol=1e-15)
        assert np.array_equal(fit_gaussian(many)[1], np.cov(many, rowvar=False))


class TestEvaluatePairs:
    def test_report(self):
        rng = np.random.default_rng(0)
        ref = rng.random((6, 1, 12, 12))
        report = evaluate_pairs(ref * 0.9, ref, label="scaled")
        assert report.label == "scaled" and report.n_images == 6
        assert report.ssim is not None and report.ssim < 1.0
        assert report.mse == pytest.approx(float(np.mean((0.1 * ref) ** 2)))

    def test_small_images_skip_ssim(self):
        ref = np.random.default_rng(0).random((4, 1, 8, 8))
        report = evaluate_pairs(ref, ref)
        assert report.ssim is None
        assert report.psnr == 100.0 and report.w2_empirical == pytest.approx(0.0, abs=1e-12)

    def test_transport_subset(self):
        ref = np.random.default_rng(0).random((10, 1, 4, 4))
        assert evaluate_pairs(ref, ref, max_transport=5).n_transport == 5


class TestLipschitz:
    def test_linear_map(self):
        points = torch.randn(100, 3, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        assert estimate_lipschitz(lambda z: 2.5 * z, points, n_pairs=500) == pytest.approx(2.5)

    def test_longer_streams_never_decrease(self):
        points = torch.randn(100, 2, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
        fn = torch.tanh
        estimates = [estimate_lipschitz(fn, points, n_pairs=n, seed=4) for n in (100, 1000, 5000)]
        assert estimates[0] <= estimates[1] <= estimates[2]
        short = lipschitz_ratios(fn, points, n_pairs=300, seed=4)
        assert np.array_equal(lipschitz_ratios(fn, points, n_pairs=600, seed=4)[:300], short)

    def test_needs_two_points(self):
        with pytest.raises(ContractViolation):
            lipschitz_ratios(torch.tanh, torch.zeros(1, 2))


class TestBound:
    def test_exact_translation(self):
        toy = translation_toy(seed=0)
        report = verify_bound(toy.autoencoder, toy.field, toy.x, toy.z0, toy.sigma_min, n_lipschitz_pairs=1000)
        assert report.lhs < 1e-2 and report.rhs < 1e-2
        assert report.delta_ed == 0.0 and report.delta_v < 1e-20
        assert report.lip_decoder == pytest.approx(1.0)

    def test_insufficient_samples(self):
        toy = translation_toy(n=100)
        with pytest.raises(InsufficientSamplesError):
            verify_bound(toy.autoencoder, toy.field, toy.x, toy.z0)

    def test_report_is_consistent(self):
        toy = gaussian_restoration_toy(seed=0, n=300)
        report = verify_bound(toy.autoencoder, toy.field, toy.x, toy.z0, n_lipschitz_pairs=1000)
        assert report.rhs >= math.sqrt(report.delta_ed)
        assert report.constant_c == pytest.approx(report.lip_decoder * math.exp(0.5 + report.lip_field))
        assert report.holds == (report.lhs <= report.rhs)

    @pytest.mark.slow
    def test_gaussian_toy_bound_holds(self):
        held = 0
        for seed in range(10):
            toy = gaussian_restoration_toy(seed=seed)
            held += verify_bound(toy.autoencoder, toy.field, toy.x, toy.z0, seed=seed).holds
        assert held >= 9
