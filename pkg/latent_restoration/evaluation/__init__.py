"""
Distortion and perception metrics, exact small-sample transport and the
restoration bound verifier.
"""

from .bound import (
    AffineField,
    ToyProblem,
    estimate_lipschitz,
    gaussian_restoration_toy,
    identity_autoencoder,
    lipschitz_ratios,
    translation_toy,
    verify_bound,
)
from .metrics import evaluate_pairs, psnr, psnr_per_image, ssim
from .transport import fit_gaussian, frechet, psd_sqrt, w2_empirical, w2_gaussian

__all__ = [
    "AffineField",
    "ToyProblem",
    "estimate_lipschitz",
    "evaluate_pairs",
    "fit_gaussian",
    "frechet",
    "gaussian_restoration_toy",
    "identity_autoencoder",
    "lipschitz_ratios",
    "psd_sqrt",
    "psnr",
    "psnr_per_image",
    "ssim",
    "translation_toy",
    "verify_bound",
    "w2_empirical",
    "w2_gaussian",
]
