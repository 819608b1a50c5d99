"""
Synthetic degradation model: blur, down-sample, noise, block-DCT compression,
up-sample, clip.

Images are ``numpy`` arrays of shape (H, W, C) with unit-range intensities.
Every operation is a pure function of its inputs and seed.
"""

from typing import Optional, Tuple

import cv2
import numpy as np
import torch
from scipy import fft, ndimage

from latent_restoration.errors import ContractViolation
from latent_restoration.models import DegradationParams, ParamRanges, TaskKind
from latent_restoration.numerics import check_finite

BLOCK = 8
SIGMA_EPS = 1e-6


def _as_hwc(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[:, :, None]
    if x.ndim != 3:
        raise ContractViolation(f"expected an (H, W, C) image, got shape {x.shape}")
    return x


def _gaussian_taps(sigma: float, kernel_size: int) -> np.ndarray:
    if sigma < 0:
        raise ContractViolation(f"sigma must be non-negative, got {sigma}")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ContractViolation(f"kernel_size must be a positive odd integer, got {kernel_size}")
    radius = kernel_size // 2
    if sigma < SIGMA_EPS:
        k1 = np.zeros(kernel_size, dtype=np.float64)
        k1[radius] = 1.0
    else:
        offsets = np.arange(-radius, radius + 1, dtype=np.float64)
        k1 = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
        k1 /= k1.sum()
    return k1


def gaussian_kernel(sigma: float, kernel_size: int) -> np.ndarray:
    """2-D Gaussian kernel built in 64-bit and normalized to sum 1."""
    k1 = _gaussian_taps(sigma, kernel_size)
    return np.outer(k1, k1)


def gaussian_blur(x: np.ndarray, sigma: float, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with reflective boundaries.

    Raises:
        ContractViolation: On negative sigma or an even kernel size
    """
    k1 = _gaussian_taps(sigma, kernel_size)
    x = _as_hwc(x)
    if sigma < SIGMA_EPS:
        return x.copy()
    out = ndimage.convolve1d(x, k1, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k1, axis=1, mode="reflect")


def resample(
    x: np.ndarray,
    factor: float,
    direction: str,
    out_shape: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Bilinear resampling by ``factor``.

    ``down`` produces floor(H / factor) x floor(W / factor). ``up`` produces
    ``out_shape`` when given (the dimensions recorded before going down),
    otherwise round(H * factor) x round(W * factor).

    Raises:
        ContractViolation: On a non-positive factor, unknown direction or a
            resulting dimension below 1
    """
    if factor <= 0:
        raise ContractViolation(f"resample factor must be positive, got {factor}")
    x = _as_hwc(x)
    h, w = x.shape[:2]
    if direction == "down":
        new_h, new_w = int(np.floor(h / factor)), int(np.floor(w / factor))
    elif direction == "up":
        if out_shape is not None:
            new_h, new_w = out_shape
        else:
            new_h, new_w = int(round(h * factor)), int(round(w * factor))
    else:
        raise ContractViolation(f"direction must be 'down' or 'up', got '{direction}'")
    if new_h < 1 or new_w < 1:
        raise ContractViolation(
            f"resampling {h}x{w} by {factor} ({direction}) gives {new_h}x{new_w}"
        )
    if (new_h, new_w) == (h, w):
        return x.copy()
    # cv2 drops a singleton channel axis, so resize channel by channel
    channels = [
        cv2.resize(x[:, :, c], (new_w, new_h), interpolation=cv2.INTER_LINEAR)
        for c in range(x.shape[2])
    ]
    return np.stack(channels, axis=2)


def add_noise(x: np.ndarray, delta: float, seed: int) -> np.ndarray:
    """Add i.i.d. N(0, delta^2) noise per pixel. The result is not clipped."""
    if delta < 0:
        raise ContractViolation(f"delta must be non-negative, got {delta}")
    x = _as_hwc(x)
    if delta == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return x + rng.normal(0.0, delta, size=x.shape)


def quality_step(q: int, base: float = 16.0) -> int:
    """Quantization step s(q) = max(1, round(50 / q * base))."""
    if not 1 <= q <= 100:
        raise ContractViolation(f"quality factor must lie in [1, 100], got {q}")
    return max(1, int(np.rint(50.0 / q * base)))


def _to_blocks(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    return x.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK, c).transpose(0, 2, 4, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw, c = blocks.shape[:3]
    return blocks.transpose(0, 3, 1, 4, 2).reshape(bh * BLOCK, bw * BLOCK, c)


def _pad_to_block(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[:2]
    pad_h, pad_w = (-h) % BLOCK, (-w) % BLOCK
    if pad_h == 0 and pad_w == 0:
        return x
    return np.pad(x, ((0, pad_h), (0, pad_w), (0, 0)), mode="symmetric")


def block_dct(x: np.ndarray) -> np.ndarray:
    """Orthonormal 8x8 DCT-II per block; returns (H/8, W/8, C, 8, 8)."""
    x = _as_hwc(x)
    if x.shape[0] % BLOCK or x.shape[1] % BLOCK:
        raise ContractViolation(f"image sides must be multiples of {BLOCK}, got {x.shape[:2]}")
    return fft.dctn(_to_blocks(x), type=2, axes=(-2, -1), norm="ortho")


def block_idct(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of ``block_dct``."""
    return _from_blocks(fft.idctn(coeffs, type=2, axes=(-2, -1), norm="ortho"))


def dct_compress(x: np.ndarray, q: int, base: float = 16.0) -> np.ndarray:
    """Block-DCT compression surrogate.

    Works on the 0-255 scale: pad to a multiple of 8 by reflection, take the
    8x8 DCT, quantize the AC coefficients with step s(q), invert, unpad. The
    DC coefficient of every block passes through unquantized, so constant
    images come back exactly. ``base == 0`` disables the stage.

    Raises:
        ContractViolation: If q is outside [1, 100]
    """
    step = quality_step(q, base)
    x = _as_hwc(x)
    if base == 0:
        return x.copy()
    h, w = x.shape[:2]
    coeffs = block_dct(_pad_to_block(x * 255.0))
    dc = coeffs[..., 0, 0].copy()
    coeffs = np.rint(coeffs / step) * step
    coeffs[..., 0, 0] = dc
    return block_idct(coeffs)[:h, :w] / 255.0


def degrade(x: np.ndarray, p: DegradationParams, seed: int) -> np.ndarray:
    """Blur, down(r), noise, compress, up(r), clip to [0, 1].

    r is capped at the shorter image side, so the down-sampled image keeps at
    least one pixel per axis.
    """
    x = _as_hwc(x)
    h, w = x.shape[:2]
    r = min(p.r, float(min(h, w)))
    out = gaussian_blur(x, p.sigma, p.kernel_size)
    out = resample(out, r, "down")
    out = add_noise(out, p.delta, seed)
    out = dct_compress(out, p.q, p.quant_base)
    out = resample(out, r, "up", out_shape=(h, w))
    return check_finite(np.clip(out, 0.0, 1.0), "degraded image")


def sample_params(ranges: ParamRanges, seed: int) -> DegradationParams:
    """Independent uniform draws from ``ranges``; q rounded to an integer."""
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(*ranges.sigma)
    r = rng.uniform(*ranges.r)
    delta = rng.uniform(*ranges.delta)
    q = int(np.clip(np.rint(rng.uniform(*ranges.q)), 1, 100))
    return DegradationParams(
        sigma=float(sigma), r=float(r), delta=float(delta), q=q,
        kernel_size=ranges.kernel_size, quant_base=ranges.quant_base,
    )


def task_ranges(task: TaskKind, ranges: ParamRanges, sr_factor: float = 4.0) -> ParamRanges:
    """Degradation ranges for a task preset.

    ``blind`` keeps the full ranges, ``super-resolution`` fixes r and drops the
    other stages, ``denoising`` keeps only noise, ``inpainting`` keeps nothing
    (the mask is applied separately).
    """
    task = TaskKind(task)
    if task == TaskKind.BLIND:
        return ranges
    identity = ParamRanges.identity(kernel_size=ranges.kernel_size)
    if task == TaskKind.SUPER_RESOLUTION:
        return identity.model_copy(update={"r": (sr_factor, sr_factor)})
    if task == TaskKind.DENOISING:
        return identity.model_copy(update={"delta": ranges.delta})
    return identity


def inpaint_mask(shape: Tuple[int, int], fraction: float, seed: int) -> np.ndarray:
    """Boolean keep-mask of ``shape`` with ``fraction`` of pixels dropped."""
    if not 0.0 <= fraction < 1.0:
        raise ContractViolation(f"mask fraction must lie in [0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    return rng.random(shape) >= fraction


def degrade_task(
    x: np.ndarray,
    task: TaskKind,
    ranges: ParamRanges,
    seed: int,
    sr_factor: float = 4.0,
    mask_fraction: float = 0.9,
) -> Tuple[np.ndarray, DegradationParams]:
    """Sample parameters for ``task`` and degrade ``x`` with them."""
    x = _as_hwc(x)
    param_seed, noise_seed = np.random.SeedSequence(seed).generate_state(2)
    params = sample_params(task_ranges(task, ranges, sr_factor), int(param_seed))
    y = degrade(x, params, int(noise_seed))
    if TaskKind(task) == TaskKind.INPAINTING:
        y = y * inpaint_mask(x.shape[:2], mask_fraction, int(noise_seed))[:, :, None]
    return y, params


def random_hflip(
    hq: torch.Tensor, lq: torch.Tensor, generator: torch.Generator
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Flip (N, C, H, W) pairs horizontally, jointly, with probability 1/2 per sample."""
    flip = torch.rand(hq.shape[0], generator=generator) < 0.5
    if not flip.any():
        return hq, lq
    hq, lq = hq.clone(), lq.clone()
    hq[flip] = hq[flip].flip(-1)
    lq[flip] = lq[flip].flip(-1)
    return hq, lq
