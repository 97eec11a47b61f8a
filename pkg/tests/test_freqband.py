import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from repack.errors import RangeError, ShapeError, ValidationError
from repack.freqband import (
    band_energy_profile,
    band_split,
    fft2,
    ifft2,
    pca_channels,
    radial_mask,
)


def naive_dft2(x):
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for i in range(h):
                for j in range(w):
                    acc += x[i, j] * np.exp(-2j * np.pi * (u * i / h + v * j / w))
            out[u, v] = acc
    return out


def test_fft_matches_naive_dft():
    x = np.random.default_rng(0).standard_normal((8, 8))
    assert np.abs(fft2(x) - naive_dft2(x)).max() <= 1e-9


def test_fft_constant_and_impulse():
    F = fft2(np.full((4, 6), 2.5))
    assert F[0, 0] == pytest.approx(2.5 * 24)
    F[0, 0] = 0
    assert np.abs(F).max() <= 1e-12
    imp = np.zeros((5, 5))
    imp[0, 0] = 1.0
    assert np.allclose(fft2(imp), 1.0)


def test_ifft_inverts_fft():
    x = np.random.default_rng(1).standard_normal((6, 10, 3))
    assert np.allclose(ifft2(fft2(x)).real, x, atol=1e-12)


def test_mask_extremes():
    m0 = radial_mask(16, 16, 0.0)
    assert m0.passed == 1 and m0.mask[0, 0]
    assert radial_mask(16, 16, 1.0).mask.all()
    assert radial_mask(7, 9, 1.0).mask.all()
    with pytest.raises(RangeError):
        radial_mask(8, 8, 1.5)
    with pytest.raises(RangeError):
        radial_mask(8, 8, -0.1)


def test_mask_bin_count_brute_force():
    count = 0
    for i in range(16):
        for j in range(16):
            fi = i if i <= 8 else i - 16
            fj = j if j <= 8 else j - 16
            rho = np.sqrt((fi / 8) ** 2 + (fj / 8) ** 2) / np.sqrt(2)
            count += rho <= 0.5
    assert radial_mask(16, 16, 0.5).passed == count


def test_mask_is_hermitian_symmetric():
    # real inputs need a mask invariant under k -> -k to split into real bands
    for h, w in [(8, 8), (7, 10), (16, 5)]:
        m = radial_mask(h, w, 0.4).mask
        neg = m[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
        assert np.array_equal(m, neg)


def test_split_r1_and_constant():
    z = np.random.default_rng(2).standard_normal((8, 8, 3))
    s = band_split(z, 1.0)
    assert np.allclose(s.z_low, z, atol=1e-6) and np.abs(s.z_high).max() <= 1e-6
    c = band_split(np.full((8, 8, 2), 3.0), 0.1)
    assert np.linalg.norm(c.z_high) <= 1e-6


def test_checkerboard_is_high_frequency():
    i, j = np.indices((16, 16))
    z = ((-1.0) ** (i + j))[..., None]
    s = band_split(z, 0.5)
    assert s.energy_high / (s.energy_low + s.energy_high) >= 0.99


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 3)),
                  elements=st.floats(-10, 10)),
       st.floats(0, 1))
def test_split_partition_and_parseval(z, r):
    s = band_split(z, r)
    assert np.allclose(s.z_low + s.z_high, z, atol=1e-5)
    total = np.sum(z**2)
    # orthogonal bands: energies add up to the total
    assert abs(s.energy_low + s.energy_high - total) <= 1e-6 * max(total, 1e-12) + 1e-12
    spec_energy = np.sum(np.abs(fft2(z)) ** 2) / (z.shape[0] * z.shape[1])
    assert abs(spec_energy - total) <= 1e-6 * max(total, 1e-12) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(-3, 3))
def test_split_is_linear_and_idempotent(seed, r, a):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 6, 6, 2))
    sx, sy, sxy = band_split(x, r), band_split(y, r), band_split(a * x + y, r)
    assert np.allclose(sxy.z_low, a * sx.z_low + sy.z_low, atol=1e-9)
    assert np.allclose(band_split(sx.z_low, r).z_low, sx.z_low, atol=1e-9)


def test_profile_endpoints_and_errors():
    z = np.random.default_rng(3).standard_normal((8, 8, 2))
    prof = band_energy_profile(z, [0.0, 1.0])
    dc = np.sum(np.abs(fft2(z)[0, 0]) ** 2) / np.sum(np.abs(fft2(z)) ** 2)
    assert prof[0][1] == pytest.approx(dc)
    assert prof[1][1] == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        band_energy_profile(z, [0.5, 0.2])
    with pytest.raises(ValidationError):
        band_energy_profile(np.zeros((4, 4, 1)), [0.5])
    with pytest.raises(ShapeError):
        band_split(np.zeros((4, 4)), 0.5)


def test_white_noise_profile_tracks_bin_count():
    radii = [0.25, 0.5, 0.75, 1.0]
    acc = np.zeros(len(radii))
    for seed in range(100):
        z = np.random.default_rng(seed).standard_normal((16, 16, 4))
        acc += [f for _, f in band_energy_profile(z, radii)]
    acc /= 100
    expected = np.array([radial_mask(16, 16, r).passed / 256 for r in radii])
    assert np.all(np.abs(acc - expected) <= 0.05 * expected)


def test_profile_is_monotone():
    z = np.random.default_rng(4).standard_normal((12, 12, 3))
    fr = [f for _, f in band_energy_profile(z, np.linspace(0, 1, 11))]
    assert all(b >= a - 1e-12 for a, b in zip(fr, fr[1:]))


def test_pca_channels_shape_and_variance_order():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((8, 8, 6)) * np.array([5, 4, 3, 1, 1, 1])
    p = pca_channels(z, 3)
    assert p.shape == (8, 8, 3)
    v = p.reshape(-1, 3).var(axis=0)
    assert v[0] >= v[1] >= v[2]
