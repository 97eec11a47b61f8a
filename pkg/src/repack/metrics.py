"""Reconstruction and distribution metrics: PSNR, SSIM, Gaussian Fréchet distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError

PSNR_IDENTICAL = math.inf


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(ref, rec, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``math.inf``."""
    ref, rec = _pair(ref, rec)
    if peak <= 0:
        raise ValidationError("peak must be positive")
    mse = float(np.mean((ref - rec) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 20.0 * math.log10(peak) - 10.0 * math.log10(mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    patches = sliding_window_view(img, win.shape)
    return np.einsum("ijkl,kl->ij", patches, win)


def ssim(ref, rec, peak: float = 1.0, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM over (h, w) or (h, w, c) images, averaged over channels.

    Statistics use a normalized Gaussian window and only positions where the
    window fits entirely inside the image.
    """
    ref, rec = _pair(ref, rec)
    if ref.ndim == 2:
        ref, rec = ref[..., None], rec[..., None]
    if ref.ndim != 3:
        raise ShapeError(f"expected (h, w[, c]) images, got {ref.shape}")
    if ref.shape[0] < win_size or ref.shape[1] < win_size:
        raise ValidationError(f"image {ref.shape[:2]} smaller than the {win_size}x{win_size} window")
    win = gaussian_window(win_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    scores = []
    for ch in range(ref.shape[2]):
        x, y = ref[..., ch], rec[..., ch]
        mx, my = _filter_valid(x, win), _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    @property
    def dim(self) -> int:
        return len(self.mean)


def gaussian_stats(Z) -> GaussianStats:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ShapeError(f"expected (M, d) rows, got {Z.shape}")
    if Z.shape[0] < 2:
        raise ValidationError("need at least two rows for a covariance")
    mean = Z.mean(axis=0)
    X = Z - mean
    cov = X.T @ X / (Z.shape[0] - 1)
    return GaussianStats(mean, (cov + cov.T) / 2, Z.shape[0])


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((S + S.T) / 2)
    w = np.where(w < 1e-10, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at zero.

    tr((S_a S_b)^(1/2)) is taken as the sum of square roots of the eigenvalues
    of the symmetric matrix S_a^(1/2) S_b S_a^(1/2), which has the same spectrum.
    """
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch {a.dim} vs {b.dim}")
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    w = np.where(w < 1e-10, 0.0, w)
    diff = a.mean - b.mean
    value = diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * np.sqrt(w).sum()
    return max(float(value), 0.0)


def frechet_between(x, y) -> float:
    return frechet_distance(gaussian_stats(x), gaussian_stats(y))
