import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from repack.errors import (
    FormatError,
    ShapeError,
    TruncatedError,
    UnsupportedError,
    ValidationError,
)
from repack.featureio import (
    DatasetSpec,
    SyntheticSpec,
    element_count_parity,
    flatten_spatial,
    gen_synthetic_features,
    read_tensor,
    read_tensors,
    unflatten_spatial,
    write_tensor,
    write_tensors,
)
from repack.spectrum import pca_spectrum


def test_header_bytes_for_2x3(tmp_path):
    path = tmp_path / "t.rpk"
    write_tensor(np.arange(6, dtype=np.float32).reshape(2, 3), path)
    raw = path.read_bytes()
    # magic, version 1, dtype 0, ndim 2, dims 2 and 3
    assert raw[:16] == bytes.fromhex("52504B31 0100 00 02 02000000 03000000".replace(" ", ""))
    assert len(raw) == 16 + 24
    assert np.frombuffer(raw[16:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    t = rng.standard_normal((3, 4, 5)).astype(np.float32)
    write_tensor(t, tmp_path / "t.rpk")
    back = read_tensor(tmp_path / "t.rpk")
    assert back.shape == t.shape
    assert back.tobytes() == t.tobytes()


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
                  elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_roundtrip_property(tmp_path_factory, t):
    path = tmp_path_factory.mktemp("rt") / "t.rpk"
    write_tensor(t, path)
    assert read_tensor(path).tobytes() == t.tobytes()


def test_nan_is_rejected_and_nothing_written(tmp_path):
    path = tmp_path / "bad.rpk"
    with pytest.raises(ValidationError):
        write_tensor(np.array([1.0, np.nan]), path)
    assert not path.exists()


def test_float64_overflowing_float32_is_rejected(tmp_path):
    with pytest.raises(ValidationError):
        write_tensor(np.array([1e300]), tmp_path / "x.rpk")


def test_bad_magic(tmp_path):
    path = tmp_path / "x.rpk"
    path.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(FormatError):
        read_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "x.rpk"
    header = b"RPK1" + struct.pack("<HBB2I", 1, 0, 2, 4, 4)
    path.write_bytes(header + np.zeros(15, "<f4").tobytes())
    with pytest.raises(TruncatedError):
        read_tensor(path)


@pytest.mark.parametrize("version,dtype", [(2, 0), (1, 1)])
def test_unsupported_version_or_dtype(tmp_path, version, dtype):
    path = tmp_path / "x.rpk"
    path.write_bytes(b"RPK1" + struct.pack("<HBBI", version, dtype, 1, 1) + bytes(4))
    with pytest.raises(UnsupportedError):
        read_tensor(path)


def test_multi_record_files(tmp_path):
    a, b = np.ones((2, 2), np.float32), np.zeros(3, np.float32)
    write_tensors([a, b], tmp_path / "m.rpk")
    got = read_tensors(tmp_path / "m.rpk")
    assert [g.shape for g in got] == [(2, 2), (3,)]
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "m.rpk")


@pytest.mark.parametrize(
    "H,W,p,D,expected",
    [
        (256, 256, 16, 768, (196608, 196608, 1.0)),
        (16, 16, 16, 3, (3, 768, 3 / 768)),
    ],
)
def test_element_count_parity(H, W, p, D, expected):
    assert element_count_parity(DatasetSpec(H, W, p, D)) == expected


def test_parity_single_token_degenerate():
    # H = W = p: one token against a 1x1 RGB "image" when p = 1
    assert element_count_parity(DatasetSpec(1, 1, 1, 3)) == (3, 3, 1.0)


def test_parity_compressed_latent():
    fe, pe, ratio = element_count_parity(DatasetSpec(256, 256, 16, 32))
    assert (fe, pe) == (32 * 16 * 16, 256 * 256 * 3)
    assert ratio == 32 / 768
    assert ratio == pytest.approx(0.0417, abs=1e-4)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 16), st.integers(1, 1024))
def test_parity_ratio_closed_form(hp, wp, p, D):
    spec = DatasetSpec(hp * p, wp * p, p, D)
    assert element_count_parity(spec)[2] == D / (p * p * 3)


def test_dataset_spec_bookkeeping():
    spec = DatasetSpec(256, 128, 16, 768, sample_count=10)
    assert spec.grid == (16, 8)
    assert spec.tokens_per_image == 128
    assert spec.total_rows == 1280
    with pytest.raises(ValidationError):
        DatasetSpec(250, 256, 16, 768)


def test_synthetic_zero_noise_lies_in_span():
    Z, U, labels = gen_synthetic_features(SyntheticSpec(32, 5, 0.0, 3, seed=1), 500)
    resid = Z - (Z @ U) @ U.T
    assert np.linalg.norm(resid, axis=1).max() <= 1e-5
    assert np.allclose(U.T @ U, np.eye(5), atol=1e-12)
    assert set(labels.tolist()) <= {0, 1, 2}


@pytest.mark.parametrize("eps", [0.01, 0.1, 1.0])
def test_synthetic_noise_within_ball(eps):
    Z, U, _ = gen_synthetic_features(SyntheticSpec(48, 6, eps, 4, seed=3), 2000)
    resid = Z - (Z @ U) @ U.T
    assert np.linalg.norm(resid, axis=1).max() <= eps + 1e-6


def test_synthetic_top_components_explain_variance():
    Z, _, _ = gen_synthetic_features(SyntheticSpec(64, 8, 0.1, 4, seed=0), 4096)
    assert pca_spectrum(Z).cumulative_ratio[7] >= 0.95


def test_synthetic_cluster_means_are_separated():
    from repack.featureio import _cluster_means

    for seed in range(5):
        means = _cluster_means(np.random.default_rng(seed), 6, 3, 4.0)
        d = np.linalg.norm(means[:, None] - means[None], axis=-1)
        assert d[np.triu_indices(6, 1)].min() >= 4.0 - 1e-12


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(16, 4, 0.1, 2, seed=42)
    a = gen_synthetic_features(spec, 100)
    b = gen_synthetic_features(spec, 100)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_synthetic_rejects_bad_specs():
    with pytest.raises(ValidationError):
        SyntheticSpec(8, 9)
    with pytest.raises(ValidationError):
        gen_synthetic_features(SyntheticSpec(8, 4), 3)


def test_flatten_row_major_patch_order():
    t = np.arange(12).reshape(2, 2, 3)
    m = flatten_spatial(t)
    assert m.shape == (4, 3)
    for i in range(2):
        for j in range(2):
            assert m[i * 2 + j].tolist() == t[i, j].tolist()
    assert np.array_equal(unflatten_spatial(m, 2, 2), t)


def test_flatten_vit_grid():
    assert flatten_spatial(np.zeros((16, 16, 768))).shape == (256, 768)


def test_flatten_shape_errors():
    with pytest.raises(ShapeError):
        flatten_spatial(np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        unflatten_spatial(np.zeros((5, 3)), 2, 2)
