"""
Wasserstein-2 distances: exact matching on equal-size samples, the Gaussian
closed form, and the Frechet score on fitted moments.
"""

from typing import Tuple, Union

import numpy as np
import torch
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from latent_restoration.errors import ContractViolation

ArrayLike = Union[np.ndarray, torch.Tensor]

MAX_TRANSPORT_POINTS = 4096
FRECHET_SHRINKAGE = 1e-6
_PSD_TOL = 1e-10


def as_points(a: ArrayLike) -> np.ndarray:
    """(N,) or (N, ...) samples as an (N, d) float64 array."""
    if isinstance(a, torch.Tensor):
        a = a.detach().cpu().numpy()
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        raise ContractViolation("a point set needs at least one axis")
    if a.ndim == 1:
        return a[:, None]
    return a.reshape(a.shape[0], -1)


def w2_empirical(a: ArrayLike, b: ArrayLike) -> float:
    """Exact discrete W2 between two equal-size samples.

    Minimum-cost perfect matching on squared Euclidean costs, then the square
    root of the mean matched cost.

    Raises:
        ContractViolation: On differing sizes or dimensions, empty sets, or
            more than 4096 points
    """
    a, b = as_points(a), as_points(b)
    if a.shape != b.shape:
        raise ContractViolation(f"point sets differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n == 0:
        raise ContractViolation("point sets are empty")
    if n > MAX_TRANSPORT_POINTS:
        raise ContractViolation(f"exact matching is limited to {MAX_TRANSPORT_POINTS} points, got {n}")
    cost = cdist(a, b, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))


def _check_psd(s: np.ndarray, name: str) -> np.ndarray:
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if s.shape[0] != s.shape[1]:
        raise ContractViolation(f"{name} must be square, got {s.shape}")
    scale = max(1.0, float(np.abs(s).max())) if s.size else 1.0
    if not np.allclose(s, s.T, atol=1e-8 * scale):
        raise ContractViolation(f"{name} is not symmetric")
    if s.size and eigh(s, eigvals_only=True).min() < -_PSD_TOL * scale:
        raise ContractViolation(f"{name} is not positive semi-definite")
    return s


def psd_sqrt(s: np.ndarray) -> np.ndarray:
    """Symmetric square root through the eigendecomposition; negative round-off is clipped."""
    w, v = eigh(s)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def w2_gaussian(m1: ArrayLike, s1: ArrayLike, m2: ArrayLike, s2: ArrayLike) -> float:
    """W2 between N(m1, S1) and N(m2, S2).

    sqrt(||m1 - m2||^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2))

    Raises:
        ContractViolation: If a covariance is not symmetric PSD or dimensions disagree
    """
    m1 = np.atleast_1d(np.asarray(m1, dtype=np.float64))
    m2 = np.atleast_1d(np.asarray(m2, dtype=np.float64))
    s1, s2 = _check_psd(s1, "S1"), _check_psd(s2, "S2")
    if not (m1.shape[0] == m2.shape[0] == s1.shape[0] == s2.shape[0]):
        raise ContractViolation("means and covariances must share one dimension")
    root2 = psd_sqrt(s2)
    middle = root2 @ s1 @ root2
    cross = psd_sqrt((middle + middle.T) / 2.0)
    trace = float(np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross))
    mean_term = float(np.sum((m1 - m2) ** 2))
    return float(np.sqrt(mean_term + max(trace, 0.0)))


def fit_gaussian(a: ArrayLike, shrinkage: float = FRECHET_SHRINKAGE) -> Tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance; ``shrinkage * I`` is added when n < d + 1.

    Raises:
        ContractViolation: With fewer than two points
    """
    a = as_points(a)
    n, d = a.shape
    if n < 2:
        raise ContractViolation(f"need at least 2 points to fit a covariance, got {n}")
    mean = a.mean(axis=0)
    cov = np.atleast_2d(np.cov(a, rowvar=False))
    if n < d + 1:
        cov = cov + shrinkage * np.eye(d)
    return mean, cov


def frechet(a: ArrayLike, b: ArrayLike, shrinkage: float = FRECHET_SHRINKAGE) -> float:
    """Squared W2 between Gaussians fitted to the raw points of ``a`` and ``b``.

    A pixel/latent surrogate of the Frechet Inception Distance; only its
    trends are meaningful.
    """
    m1, s1 = fit_gaussian(a, shrinkage)
    m2, s2 = fit_gaussian(b, shrinkage)
    return w2_gaussian(m1, s1, m2, s2) ** 2
