"""PCA spectrum of feature matrices: explained variance, elbow and effective rank."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrumError, ShapeError, ValidationError

CLAMP_REL = 1e-10
NO_ELBOW_TOL = 1e-9


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    explained_ratio: np.ndarray
    cumulative_ratio: np.ndarray
    elbow_index: int | None
    effective_rank: float
    components: np.ndarray = field(repr=False)  # (D, r) principal directions
    mean: np.ndarray = field(repr=False)
    n_samples: int = 0

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def cumulative_at_fraction(self, f: float) -> float:
        """Cumulative ratio after ``round(f * n)`` components (at least one)."""
        k = max(1, int(round(f * len(self))))
        return float(self.cumulative_ratio[k - 1])


def _as_matrix(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ShapeError(f"expected an (M, D) matrix, got shape {Z.shape}")
    if Z.shape[0] < 2:
        raise ValidationError("need at least two rows")
    return Z


def _clamp(eig: np.ndarray) -> np.ndarray:
    eig = np.where(eig < CLAMP_REL * eig.max(), 0.0, eig) if eig.max() > 0 else np.zeros_like(eig)
    return eig


def report_from_eigenvalues(
    eigenvalues, components: np.ndarray | None = None, mean: np.ndarray | None = None,
    n_samples: int = 0,
) -> SpectrumReport:
    """Build a report from a precomputed (not necessarily sorted) eigenvalue list."""
    eig = np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1]
    if eig.size == 0 or eig.max() <= 0:
        raise DegenerateSpectrumError("total variance is zero")
    eig = _clamp(eig)
    ratio = eig / eig.sum()
    cum = np.cumsum(ratio)
    cum[-1] = 1.0 if abs(cum[-1] - 1.0) < 1e-12 else cum[-1]
    report = SpectrumReport(
        eigenvalues=eig,
        explained_ratio=ratio,
        cumulative_ratio=cum,
        elbow_index=None,
        effective_rank=effective_rank_of(ratio),
        components=np.empty((0, 0)) if components is None else components,
        mean=np.empty(0) if mean is None else mean,
        n_samples=n_samples,
    )
    if len(eig) >= 3:
        report.elbow_index = elbow_detect(report)
    return report


def pca_spectrum(Z) -> SpectrumReport:
    """Eigen-spectrum of the sample covariance (divisor M-1) via SVD of the centered data."""
    Z = _as_matrix(Z)
    M = Z.shape[0]
    mean = Z.mean(axis=0)
    X = Z - mean
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    eig = s**2 / (M - 1)
    if not np.any(eig > 0):
        raise DegenerateSpectrumError("all columns are constant")
    return report_from_eigenvalues(eig, components=vt.T, mean=mean, n_samples=M)


def covariance_eigenvalues(Z) -> np.ndarray:
    """Descending eigenvalues of the explicit D x D sample covariance (cross-check path)."""
    Z = _as_matrix(Z)
    X = Z - Z.mean(axis=0)
    cov = X.T @ X / (Z.shape[0] - 1)
    eig = np.linalg.eigvalsh((cov + cov.T) / 2)[::-1]
    return np.clip(eig[: min(Z.shape)], 0.0, None)


def elbow_detect(report: SpectrumReport) -> int | None:
    """Knee of the cumulative explained-variance curve, as a 1-based component count.

    Both axes are rescaled to [0, 1] and the point with the largest vertical
    gap above the chord joining the first and last points wins; ``argmax``
    keeps the smallest index on ties. A curve that never rises above its
    chord by more than ``NO_ELBOW_TOL`` has no elbow and yields ``None``.
    """
    cum = np.asarray(report.cumulative_ratio, dtype=np.float64)
    n = len(cum)
    if n < 3:
        raise ValidationError("elbow detection needs at least 3 components")
    span = cum[-1] - cum[0]
    if span <= 0:
        return None
    x = np.arange(n) / (n - 1)
    y = (cum - cum[0]) / span
    gap = y - x
    best = int(np.argmax(gap))
    if gap[best] < NO_ELBOW_TOL:
        return None
    return best + 1


def effective_rank_of(ratio) -> float:
    p = np.asarray(ratio, dtype=np.float64)
    p = p[p > 0]
    if p.size == 0:
        raise DegenerateSpectrumError("no positive eigenvalue")
    p = p / p.sum()
    return float(np.exp(-(p * np.log(p)).sum()))


def effective_rank(report: SpectrumReport) -> float:
    """exp of the Shannon entropy (nats) of the explained-variance distribution."""
    return effective_rank_of(report.explained_ratio)


def truncation_error(report: SpectrumReport, k: int) -> float:
    """Squared Frobenius error of the best rank-k reconstruction of the centered data."""
    return float(report.eigenvalues[k:].sum() * (report.n_samples - 1))
