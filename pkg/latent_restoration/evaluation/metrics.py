"""
Distortion metrics (MSE, PSNR, SSIM) and the batch report that combines
them with the distribution distances.
"""

import math
from typing import Union

import cv2
import numpy as np
import torch

from latent_restoration.errors import ContractViolation
from latent_restoration.evaluation.transport import MAX_TRANSPORT_POINTS, frechet, w2_empirical
from latent_restoration.models import MetricsReport

ArrayLike = Union[np.ndarray, torch.Tensor]

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def as_numpy(x: ArrayLike) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _same_shape(x: np.ndarray, x_hat: np.ndarray) -> None:
    if x.shape != x_hat.shape:
        raise ContractViolation(f"shape mismatch: {x.shape} vs {x_hat.shape}")


def psnr(x: ArrayLike, x_hat: ArrayLike, max_val: float = 1.0, cap: float = PSNR_CAP) -> float:
    """10 * log10(max_val^2 / MSE) in dB, capped at ``cap`` (also when MSE is 0)."""
    x, x_hat = as_numpy(x), as_numpy(x_hat)
    _same_shape(x, x_hat)
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * math.log10(max_val ** 2 / mse), cap)


def psnr_per_image(x: ArrayLike, x_hat: ArrayLike, max_val: float = 1.0, cap: float = PSNR_CAP) -> np.ndarray:
    """PSNR of each image in a batch (first axis)."""
    x, x_hat = as_numpy(x), as_numpy(x_hat)
    _same_shape(x, x_hat)
    return np.array([psnr(a, b, max_val, cap) for a, b in zip(x, x_hat)])


def _ssim_channel(a: np.ndarray, b: np.ndarray, max_val: float) -> float:
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2

    def blur(img: np.ndarray) -> np.ndarray:
        return cv2.GaussianBlur(img, (SSIM_WINDOW, SSIM_WINDOW), SSIM_SIGMA, borderType=cv2.BORDER_REFLECT)

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    )
    pad = SSIM_WINDOW // 2
    return float(ssim_map[pad:-pad, pad:-pad].mean())


def ssim(x: ArrayLike, x_hat: ArrayLike, max_val: float = 1.0) -> float:
    """Single-scale SSIM of one image, (H, W) or (H, W, C); channels are averaged.

    Uses an 11-tap Gaussian window (sigma 1.5) over the valid region only.

    Raises:
        ContractViolation: On shape mismatch or an image smaller than the window
    """
    x, x_hat = as_numpy(x), as_numpy(x_hat)
    _same_shape(x, x_hat)
    if x.ndim == 2:
        x, x_hat = x[:, :, None], x_hat[:, :, None]
    if x.ndim != 3:
        raise ContractViolation(f"expected an (H, W) or (H, W, C) image, got shape {x.shape}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ContractViolation(f"image {x.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    values = [
        _ssim_channel(np.ascontiguousarray(x[:, :, c]), np.ascontiguousarray(x_hat[:, :, c]), max_val)
        for c in range(x.shape[2])
    ]
    return float(np.clip(np.mean(values), -1.0, 1.0))


def evaluate_pairs(
    restored: ArrayLike,
    reference: ArrayLike,
    label: str = "",
    max_val: float = 1.0,
    max_transport: int = MAX_TRANSPORT_POINTS,
) -> MetricsReport:
    """Score a batch of restored images (N, C, H, W) against their references.

    PSNR and SSIM are averaged per image; the distribution distances treat
    each image as one point. SSIM is omitted for images below the window size
    and the transport distance uses at most ``max_transport`` pairs.
    """
    restored, reference = as_numpy(restored), as_numpy(reference)
    _same_shape(restored, reference)
    if restored.ndim != 4 or restored.shape[0] == 0:
        raise ContractViolation(f"expected a non-empty (N, C, H, W) batch, got shape {restored.shape}")
    n = restored.shape[0]

    ssim_value = None
    if min(restored.shape[2:]) >= SSIM_WINDOW:
        ssim_value = float(np.mean([
            ssim(a.transpose(1, 2, 0), b.transpose(1, 2, 0), max_val)
            for a, b in zip(restored, reference)
        ]))

    n_transport = min(n, max_transport)
    flat_restored = restored.reshape(n, -1)
    flat_reference = reference.reshape(n, -1)
    return MetricsReport(
        mse=float(np.mean((restored - reference) ** 2)),
        psnr=float(np.mean(psnr_per_image(reference, restored, max_val))),
        ssim=ssim_value,
        w2_empirical=w2_empirical(flat_restored[:n_transport], flat_reference[:n_transport]),
        frechet=frechet(flat_restored, flat_reference),
        n_images=n,
        n_transport=n_transport,
        label=label,
    )
