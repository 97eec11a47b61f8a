"""Representation packing lab: spectrum diagnosis, linear packing, band analysis, toy diffusion."""

import os

__version__ = "0.1.0"

# BLAS thread pools must be capped before numpy loads; one thread also keeps
# reductions bit-reproducible across runs.
_threads = os.environ.get("REPACK_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

from .errors import (  # noqa: E402
    DivergenceError,
    FormatError,
    RepackError,
    ShapeError,
    ValidationError,
)
from .featureio import (  # noqa: E402
    DatasetSpec,
    SyntheticSpec,
    element_count_parity,
    gen_synthetic_features,
    read_tensor,
    write_tensor,
)
from .spectrum import SpectrumReport, effective_rank, elbow_detect, pca_spectrum  # noqa: E402

__all__ = [
    "DatasetSpec",
    "DivergenceError",
    "FormatError",
    "RepackError",
    "ShapeError",
    "SpectrumReport",
    "SyntheticSpec",
    "ValidationError",
    "effective_rank",
    "elbow_detect",
    "element_count_parity",
    "gen_synthetic_features",
    "pca_spectrum",
    "read_tensor",
    "write_tensor",
]
