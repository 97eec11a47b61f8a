"""Tensor storage, dataset bookkeeping and the synthetic feature generator.

Tensors are plain ``numpy.ndarray`` objects; on disk they use the RPK1
container::

    offset  size  field
    0       4     magic  b"RPK1"
    4       2     version (u16, = 1)
    6       1     dtype code (u8, 0 = float32)
    7       1     ndim (u8)
    8       4*n   dims (u32 each)
    ...           payload, float32, row-major

All integers are little-endian. Several records may be concatenated in one
file (model files do this); :func:`read_tensor` insists on exactly one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import (
    FormatError,
    RangeError,
    ShapeError,
    TruncatedError,
    UnsupportedError,
    ValidationError,
    WriteError,
)

MAGIC = b"RPK1"
VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sHBB")
_F32 = np.dtype("<f4")


def validate_tensor(t: np.ndarray) -> np.ndarray:
    """Return ``t`` as a little-endian float32 array, or raise if it is not storable."""
    arr = np.asarray(t)
    if arr.ndim == 0 or arr.ndim > 255:
        raise ShapeError(f"tensor rank must be in [1, 255], got {arr.ndim}")
    if any(n <= 0 for n in arr.shape):
        raise ShapeError(f"all dims must be positive, got {list(arr.shape)}")
    if any(n >= 2**32 for n in arr.shape):
        raise ShapeError("dims must fit in 32 bits")
    if not np.issubdtype(arr.dtype, np.number) or np.iscomplexobj(arr):
        raise ValidationError(f"unsupported element type {arr.dtype}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.ascontiguousarray(arr, dtype=_F32)
    if not np.all(np.isfinite(out)):
        raise ValidationError("tensor contains non-finite values (after float32 conversion)")
    return out


def _encode(arr: np.ndarray) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + arr.tobytes(order="C")


def write_tensors(tensors: Sequence[np.ndarray], path: str | Path) -> None:
    """Write one or more RPK1 records back to back.

    Every tensor is validated before the file is opened, so a bad tensor
    leaves no file behind.
    """
    blobs = [_encode(validate_tensor(t)) for t in tensors]
    try:
        with open(path, "wb") as fh:
            for blob in blobs:
                fh.write(blob)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def write_tensor(t: np.ndarray, path: str | Path) -> None:
    write_tensors([t], path)


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def _read_record(fh: BinaryIO) -> np.ndarray | None:
    first = fh.read(_HEADER.size)
    if not first:
        return None
    if len(first) < 4 or first[:4] != MAGIC:
        raise FormatError(f"bad magic {first[:4]!r}")
    if len(first) != _HEADER.size:
        raise TruncatedError("truncated header")
    _, version, dtype, ndim = _HEADER.unpack(first)
    if version != VERSION:
        raise UnsupportedError(f"unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedError(f"unsupported dtype code {dtype}")
    if ndim == 0:
        raise FormatError("ndim must be at least 1")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
    if any(n == 0 for n in dims):
        raise FormatError(f"zero dimension in {list(dims)}")
    count = int(np.prod(dims, dtype=np.int64))
    payload = _read_exact(fh, 4 * count, "payload")
    return np.frombuffer(payload, dtype=_F32).reshape(dims).copy()


def read_tensors(path: str | Path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        out = []
        while (rec := _read_record(fh)) is not None:
            out.append(rec)
    if not out:
        raise FormatError(f"{path} holds no tensor records")
    return out


def read_tensor(path: str | Path) -> np.ndarray:
    tensors = read_tensors(path)
    if len(tensors) != 1:
        raise FormatError(f"{path} holds {len(tensors)} records, expected 1")
    return tensors[0]


# -- dataset bookkeeping ----------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    image_height: int
    image_width: int
    patch_size: int
    embed_dim: int
    sample_count: int = 1

    def __post_init__(self):
        for name in ("image_height", "image_width", "patch_size", "embed_dim", "sample_count"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValidationError("image size must be a multiple of the patch size")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_height // self.patch_size, self.image_width // self.patch_size

    @property
    def tokens_per_image(self) -> int:
        h, w = self.grid
        return h * w

    @property
    def total_rows(self) -> int:
        return self.sample_count * self.tokens_per_image


def element_count_parity(spec: DatasetSpec) -> tuple[int, int, float]:
    """Compare the element count of a patch-feature map with the RGB image it came from.

    For a ViT-B/16 style encoder (p=16, D=768) the two counts coincide and the
    ratio is exactly 1: the features are no smaller than the pixels.
    """
    h, w = spec.grid
    feature_elements = h * w * spec.embed_dim
    pixel_elements = spec.image_height * spec.image_width * 3
    return feature_elements, pixel_elements, feature_elements / pixel_elements


# -- synthetic features -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    embed_dim: int
    intrinsic_dim: int
    noise_radius: float = 0.1
    cluster_count: int = 4
    seed: int = 0
    min_mean_separation: float = 4.0

    def __post_init__(self):
        if self.embed_dim <= 0 or self.intrinsic_dim <= 0 or self.cluster_count <= 0:
            raise ValidationError("embed_dim, intrinsic_dim and cluster_count must be positive")
        if self.intrinsic_dim > self.embed_dim:
            raise ValidationError(
                f"intrinsic_dim {self.intrinsic_dim} exceeds embed_dim {self.embed_dim}"
            )
        if not self.noise_radius >= 0:
            raise RangeError("noise_radius must be >= 0")


def _cluster_means(rng: np.random.Generator, k: int, d: int, min_sep: float) -> np.ndarray:
    means = rng.standard_normal((k, d))
    if k > 1:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        closest = dist[np.triu_indices(k, 1)].min()
        if closest < min_sep:
            means *= min_sep / max(closest, 1e-12)
    return means


def gen_synthetic_features(
    spec: SyntheticSpec, n_rows: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``n_rows`` features lying within ``noise_radius`` of a known subspace.

    Core coordinates come from a Gaussian mixture with identity component
    covariance, so component means are directly comparable in whitened units.
    Off-manifold noise is isotropic Gaussian with per-axis scale
    ``noise_radius / sqrt(D)``, then projected onto the ``noise_radius`` ball.

    Returns
    -------
    Z : (n_rows, D) float64
    U : (D, d_star) float64 with orthonormal columns
    labels : (n_rows,) int64 mixture component per row
    """
    if n_rows < spec.intrinsic_dim:
        raise ValidationError(f"n_rows={n_rows} must be at least intrinsic_dim={spec.intrinsic_dim}")
    D, d, k = spec.embed_dim, spec.intrinsic_dim, spec.cluster_count
    rng = np.random.default_rng(spec.seed)

    q, r = np.linalg.qr(rng.standard_normal((D, d)))
    basis = q * np.sign(np.diag(r))  # sign fix makes the basis unique for the draw

    means = _cluster_means(rng, k, d, spec.min_mean_separation)
    labels = rng.integers(0, k, size=n_rows)
    core = means[labels] + rng.standard_normal((n_rows, d))

    eps = float(spec.noise_radius)
    noise = rng.standard_normal((n_rows, D)) * (eps / np.sqrt(D))
    norms = np.linalg.norm(noise, axis=1, keepdims=True)
    scale = np.where(norms > eps, eps / np.maximum(norms, 1e-300), 1.0)
    noise = noise * scale

    Z = core @ basis.T + noise
    return Z, basis, labels.astype(np.int64)


# -- spatial layout ---------------------------------------------------------


def flatten_spatial(t: np.ndarray) -> np.ndarray:
    """(h, w, D) feature map -> (h*w, D) matrix; row i*w + j is position (i, j)."""
    t = np.asarray(t)
    if t.ndim != 3:
        raise ShapeError(f"flatten_spatial expects rank 3, got shape {t.shape}")
    h, w, D = t.shape
    return t.reshape(h * w, D)


def unflatten_spatial(m: np.ndarray, h: int, w: int) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != h * w:
        raise ShapeError(f"cannot unflatten shape {m.shape} to grid {h}x{w}")
    return m.reshape(h, w, m.shape[1])
