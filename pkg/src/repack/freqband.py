"""Low/high frequency split of latent grids with a hard radial mask.

Masks live in unshifted FFT layout. Bin k on an axis of length n has the
signed frequency ``k`` if ``k <= n // 2`` else ``k - n``; the radius is
scaled per axis by n/2 and divided by sqrt(2), so the Nyquist corner sits
at 1 and ``r = 1`` keeps every bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeError, ValidationError


def fft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized 2-D DFT over the first two axes."""
    return np.fft.fft2(np.asarray(x), axes=(0, 1))


def ifft2(X: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2` (scales by 1/(h*w))."""
    return np.fft.ifft2(np.asarray(X), axes=(0, 1))


def signed_frequencies(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n)


def radial_distance(h: int, w: int) -> np.ndarray:
    fx = signed_frequencies(h) / (h / 2)
    fy = signed_frequencies(w) / (w / 2)
    return np.sqrt(fx[:, None] ** 2 + fy[None, :] ** 2) / np.sqrt(2.0)


@dataclass
class FrequencyMask:
    height: int
    width: int
    radius: float
    mask: np.ndarray  # bool, (h, w)

    @property
    def passed(self) -> int:
        return int(self.mask.sum())


def radial_mask(h: int, w: int, r: float) -> FrequencyMask:
    if h < 1 or w < 1:
        raise ShapeError("grid must be at least 1x1")
    if not 0.0 <= r <= 1.0:
        raise RangeError(f"radius {r} outside [0, 1]")
    rho = radial_distance(h, w)
    # guard the r = 1 corner against rounding in the sqrt
    mask = rho <= r + 1e-12
    return FrequencyMask(h, w, float(r), mask)


@dataclass
class BandSplit:
    z_low: np.ndarray
    z_high: np.ndarray
    energy_low: float
    energy_high: float

    @property
    def low_fraction(self) -> float:
        total = self.energy_low + self.energy_high
        return self.energy_low / total if total > 0 else float("nan")


def _as_latent(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeError(f"expected an (h, w, c) latent, got shape {z.shape}")
    return z


def band_split(z, r: float) -> BandSplit:
    """Split every channel of an (h, w, c) latent into low and high bands."""
    z = _as_latent(z)
    h, w, _ = z.shape
    m = radial_mask(h, w, r).mask[:, :, None]
    spec = fft2(z)
    z_low = ifft2(spec * m).real
    z_high = ifft2(spec * ~m).real
    return BandSplit(z_low, z_high, float(np.sum(z_low**2)), float(np.sum(z_high**2)))


def band_energy_profile(z, radii) -> list[tuple[float, float]]:
    """Fraction of total energy inside each radius, computed in the frequency domain."""
    z = _as_latent(z)
    radii = [float(r) for r in radii]
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise ValidationError("radii must be sorted ascending")
    h, w, _ = z.shape
    power = (np.abs(fft2(z)) ** 2).sum(axis=2)
    total = power.sum()
    if total <= 0:
        raise ValidationError("latent has zero energy")
    out = []
    for r in radii:
        frac = float(power[radial_mask(h, w, r).mask].sum() / total)
        out.append((r, min(frac, 1.0)))
    return out


def pca_channels(z, k: int = 3) -> np.ndarray:
    """Project an (h, w, c) latent onto its top-k principal channels (for visualisation)."""
    z = _as_latent(z)
    h, w, c = z.shape
    X = z.reshape(h * w, c)
    X = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    k = min(k, vt.shape[0])
    return (X @ vt[:k].T).reshape(h, w, k)
