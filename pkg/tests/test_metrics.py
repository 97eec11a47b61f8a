import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repack.errors import ShapeError, ValidationError
from repack.metrics import (
    GaussianStats,
    frechet_between,
    frechet_distance,
    gaussian_stats,
    psnr,
    ssim,
)


def test_psnr_closed_forms():
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1), 1.0) == 20.0
    assert psnr(np.full(10, 0.5), np.full(10, 0.6), 1.0) == 20.0
    a = np.random.default_rng(0).random((5, 5))
    assert psnr(a, a) == math.inf
    with pytest.raises(ShapeError):
        psnr(np.zeros(3), np.zeros(4))


def test_psnr_peak_scaling():
    a, b = np.zeros(8), np.full(8, 25.5)
    assert psnr(a, b, 255.0) == pytest.approx(20.0)


def test_ssim_identity_and_negative():
    i, j = np.indices((32, 32))
    board = ((i // 4 + j // 4) % 2).astype(float)
    assert ssim(board, board) == pytest.approx(1.0, abs=1e-9)
    assert ssim(board, 1.0 - board) <= 0.2
    rgb = np.random.default_rng(1).random((16, 16, 3))
    assert ssim(rgb, rgb) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_images_luminance_only():
    a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.6)
    c1, c2 = 0.01**2, 0.03**2
    expected = (2 * 0.2 * 0.6 + c1) * c2 / ((0.2**2 + 0.6**2 + c1) * c2)
    assert ssim(a, b) == pytest.approx(expected, rel=1e-9)


def test_ssim_errors():
    with pytest.raises(ValidationError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((16, 16)), np.zeros((16, 15)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 12)), rng.random((12, 12))
    s = ssim(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(ssim(b, a), abs=1e-12)


def test_gaussian_stats_hand_cases():
    g = gaussian_stats(np.array([[0.0, 0.0], [2.0, 2.0]]))
    assert np.allclose(g.mean, [1, 1])
    assert np.allclose(g.covariance, [[2, 2], [2, 2]])
    rep = gaussian_stats(np.tile([1.0, -3.0, 2.0], (7, 1)))
    assert np.all(rep.covariance == 0)
    with pytest.raises(ValidationError):
        gaussian_stats(np.zeros((1, 3)))


def test_gaussian_stats_monte_carlo():
    g = gaussian_stats(np.random.default_rng(2).standard_normal((100_000, 4)))
    assert np.abs(g.mean).max() <= 0.02
    assert np.abs(g.covariance - np.eye(4)).max() <= 0.05


def test_frechet_closed_forms():
    one = GaussianStats(np.zeros(1), np.eye(1), 2)
    shifted = GaussianStats(np.ones(1), np.eye(1), 2)
    assert frechet_distance(one, shifted) == pytest.approx(1.0, abs=1e-6)
    a = GaussianStats(np.zeros(2), np.diag([1.0, 4.0]), 2)
    b = GaussianStats(np.zeros(2), np.diag([4.0, 1.0]), 2)
    assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-6)
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ShapeError):
        frechet_distance(one, a)


def _random_stats(rng, d):
    A = rng.standard_normal((d, d))
    return GaussianStats(rng.standard_normal(d), A @ A.T + 0.1 * np.eye(d), 10)


def _frechet_oracle(a, b):
    # scipy-free oracle: tr sqrt(Sa Sb) from the eigenvalues of the (non-symmetric) product
    ev = np.linalg.eigvals(a.covariance @ b.covariance)
    tr = np.sum(np.sqrt(np.clip(ev.real, 0, None)))
    diff = a.mean - b.mean
    return diff @ diff + np.trace(a.covariance + b.covariance) - 2 * tr


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_frechet_symmetric_nonnegative_and_matches_oracle(seed, d):
    rng = np.random.default_rng(seed)
    a, b = _random_stats(rng, d), _random_stats(rng, d)
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0
    assert ab == pytest.approx(ba, rel=1e-6, abs=1e-6)
    assert ab == pytest.approx(_frechet_oracle(a, b), rel=1e-6, abs=1e-6)


def test_frechet_between_same_data():
    x = np.random.default_rng(3).standard_normal((500, 3))
    assert frechet_between(x, x) == pytest.approx(0.0, abs=1e-6)
