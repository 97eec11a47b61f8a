"""Linear packing bottleneck: bias-free projector D -> d plus a small decoder.

The PCA truncation here is the Eckart-Young reference any trained linear
bottleneck is measured against.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .errors import DivergenceError, RangeError, ShapeError, ValidationError
from .featureio import read_tensors, write_tensors
from .spectrum import pca_spectrum


@dataclass
class TrainConfig:
    epochs: int = 1200
    batch_size: int = 256
    lr: float = 0.25
    momentum: float = 0.9
    seed: int = 0
    decoder: str = "linear"  # linear | mlp
    objective: str = "l2"  # l1 | l2
    hidden: int = 64
    bias: bool = False

    def __post_init__(self):
        if self.decoder not in ("linear", "mlp"):
            raise ValidationError(f"unknown decoder kind {self.decoder!r}")
        if self.objective not in ("l1", "l2"):
            raise ValidationError(f"unknown objective {self.objective!r}")
        if self.epochs < 0 or self.batch_size <= 0 or self.lr < 0:
            raise ValidationError("epochs >= 0, batch_size > 0 and lr >= 0 required")


class Projector(nn.Dense):
    """Linear map D -> d. Bias-free unless asked otherwise (``bias=True`` adds d params)."""

    def __init__(self, in_dim: int, out_dim: int, rng=None, bias: bool = False):
        if out_dim > in_dim:
            raise ValidationError(f"packed dim {out_dim} exceeds input dim {in_dim}")
        super().__init__("proj", in_dim, out_dim, rng, bias=bias)

    @property
    def param_count(self) -> int:
        return nn.count_params(self.params())


def make_decoder(kind: str, in_dim: int, out_dim: int, rng, hidden: int = 64) -> nn.Sequential:
    if kind == "linear":
        return nn.Sequential([nn.Dense("dec0", in_dim, out_dim, rng)])
    if kind == "mlp":
        return nn.mlp("dec", [in_dim, hidden, out_dim], rng, activation="tanh")
    raise ValidationError(f"unknown decoder kind {kind!r}")


@dataclass
class PackModel:
    projector: Projector
    decoder: nn.Sequential
    config: TrainConfig = field(default_factory=TrainConfig)
    loss_curve: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, in_dim: int, d: int, out_dim: int | None = None, config: TrainConfig | None = None,
             rng: np.random.Generator | None = None) -> "PackModel":
        config = config or TrainConfig()
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        projector = Projector(in_dim, d, rng, bias=config.bias)
        decoder = make_decoder(config.decoder, d, out_dim or in_dim, rng, config.hidden)
        return cls(projector, decoder, config)

    @property
    def in_dim(self) -> int:
        return self.projector.in_dim

    @property
    def out_dim(self) -> int:
        return self.projector.out_dim

    def params(self) -> dict[str, np.ndarray]:
        p = self.projector.params()
        p.update(self.decoder.params())
        return p

    def project(self, Z) -> np.ndarray:
        return project(self.projector, Z)

    def decode(self, latent) -> np.ndarray:
        return self.decoder.forward(np.asarray(latent, dtype=np.float64))

    def reconstruct(self, Z) -> np.ndarray:
        return self.decode(self.project(Z))

    # grad_check protocol: batch is Z or (Z, target)
    def _split(self, batch):
        if isinstance(batch, tuple):
            return np.asarray(batch[0], np.float64), np.asarray(batch[1], np.float64)
        Z = np.asarray(batch, np.float64)
        return Z, Z

    def loss(self, batch, objective: str = "l2") -> float:
        Z, target = self._split(batch)
        return nn.loss_and_grad(self.reconstruct(Z), target, objective)[0]

    def loss_and_grad(self, batch, objective: str = "l2"):
        Z, target = self._split(batch)
        h = self.projector.forward(Z)
        out = self.decoder.forward(h)
        loss, g = nn.loss_and_grad(out, target, objective)
        gh, grads = self.decoder.backward(g)
        self.projector.backward(gh, grads)
        return loss, grads


def project(projector: Projector | PackModel, Z) -> np.ndarray:
    """Map each row of Z (M, D) to the packed space (M, d)."""
    if isinstance(projector, PackModel):
        projector = projector.projector
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != projector.in_dim:
        raise ShapeError(f"expected (M, {projector.in_dim}) input, got {Z.shape}")
    out = Z @ projector.weight.T
    if projector.bias is not None:
        out = out + projector.bias
    return out


def pca_truncate(Z, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best rank-d affine reconstruction of Z.

    Returns ``(Z_core, Z_packed, basis)``: the reconstruction in the original
    space, the centered coordinates in the top-d principal basis, and the
    (D, d) basis itself.
    """
    report = pca_spectrum(Z)
    available = report.components.shape[1]
    if not 1 <= d <= available:
        raise RangeError(f"d={d} outside [1, {available}]")
    Z = np.asarray(Z, dtype=np.float64)
    basis = report.components[:, :d]
    packed = (Z - report.mean) @ basis
    core = packed @ basis.T + report.mean
    return core, packed, basis


@dataclass
class ManifoldDecomposition:
    z_core: np.ndarray
    z_noise: np.ndarray
    residual_norms: np.ndarray


def decompose_manifold(Z, basis, mean=None, tol: float = 1e-6) -> ManifoldDecomposition:
    """Split Z into its projection onto an affine subspace and the orthogonal remainder.

    The subspace is ``mean + span(basis)``. ``mean`` defaults to the origin,
    which is where the synthetic manifolds live; pass the PCA mean to match
    :func:`pca_truncate`.
    """
    Z = np.asarray(Z, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    if Z.ndim != 2 or basis.ndim != 2 or basis.shape[0] != Z.shape[1]:
        raise ShapeError(f"incompatible shapes Z{Z.shape}, basis{basis.shape}")
    gram = basis.T @ basis
    if np.max(np.abs(gram - np.eye(basis.shape[1]))) > tol:
        raise ValidationError("basis columns are not orthonormal")
    origin = np.zeros(Z.shape[1]) if mean is None else np.asarray(mean, dtype=np.float64)
    X = Z - origin
    core = (X @ basis) @ basis.T
    noise = X - core
    return ManifoldDecomposition(core + origin, noise, np.linalg.norm(noise, axis=1))


def reconstruction_loss_l1(decoded, target) -> float:
    decoded = np.asarray(decoded, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if decoded.shape != target.shape:
        raise ShapeError(f"shape mismatch {decoded.shape} vs {target.shape}")
    return float(np.mean(np.abs(decoded - target)))


def reconstruction_mse(model: PackModel, Z) -> float:
    Z = np.asarray(Z, dtype=np.float64)
    return float(np.mean((model.reconstruct(Z) - Z) ** 2))


def train_pack(Z, d: int, cfg: TrainConfig | None = None, targets=None) -> tuple[PackModel, list[float]]:
    """Fit projector and decoder jointly with minibatch momentum SGD.

    The reconstruction target is Z itself unless paired ``targets`` (e.g.
    synthetic pixels) are given. The loss curve holds the full-data loss at
    the end of every epoch, preceded by the loss at initialization.
    """
    cfg = cfg or TrainConfig()
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ShapeError(f"expected (M, D) features, got {Z.shape}")
    T = Z if targets is None else np.asarray(targets, dtype=np.float64)
    if T.shape[0] != Z.shape[0]:
        raise ShapeError("targets must pair row-for-row with Z")
    M = Z.shape[0]
    rng = np.random.default_rng(cfg.seed)
    model = PackModel.init(Z.shape[1], d, T.shape[1], cfg, rng)
    opt = nn.MomentumSGD(model.params(), cfg.lr, cfg.momentum)

    curve = [model.loss((Z, T), cfg.objective)]
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            perm = rng.permutation(M)
            for start in range(0, M, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                loss, grads = model.loss_and_grad((Z[idx], T[idx]), cfg.objective)
                if not np.isfinite(loss):
                    raise DivergenceError("epoch", epoch)
                opt.step(grads)
            full = model.loss((Z, T), cfg.objective)
            if not np.isfinite(full):
                raise DivergenceError("epoch", epoch)
            curve.append(full)
    model.loss_curve = curve
    return model, curve


def grad_check(
    model,
    batch,
    objective: str = "l2",
    step: float = 1e-4,
    grad_fn: Callable | None = None,
) -> float:
    """Worst relative disagreement between analytic and central-difference gradients.

    ``model`` needs ``params()``, ``loss(batch, objective)`` and
    ``loss_and_grad(batch, objective)``. ``grad_fn`` overrides where the
    analytic gradients come from, which lets tests feed in corrupted ones.
    """
    params = model.params()
    if grad_fn is None:
        _, grads = model.loss_and_grad(batch, objective)
    else:
        grads = grad_fn(model, batch, objective)
    worst = 0.0
    for name, p in params.items():
        a = np.asarray(grads[name], dtype=np.float64)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = model.loss(batch, objective)
            flat[i] = orig - step
            down = model.loss(batch, objective)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            analytic = a.reshape(-1)[i]
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, err)
    return worst


# -- persistence ------------------------------------------------------------


def _sidecar(path) -> Path:
    return Path(str(path) + ".cfg")


def write_config(path, kind: str, values: dict, names: list[str]) -> None:
    lines = ["# repack model sidecar", f"kind={kind}"]
    lines += [f"{k}={v}" for k, v in values.items()]
    lines.append("tensors=" + ",".join(names))
    _sidecar(path).write_text("\n".join(lines) + "\n")


def read_config(path) -> dict[str, str]:
    cfg = {}
    for line in _sidecar(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def save_pack_model(model: PackModel, path) -> list[Path]:
    params = model.params()
    names = list(params)
    write_tensors([params[n] for n in names], path)
    values = asdict(model.config)
    values.update(in_dim=model.in_dim, out_dim=model.out_dim,
                  decoded_dim=model.decoder.layers[-1].out_dim)
    write_config(path, "pack", values, names)
    return [Path(path), _sidecar(path)]


def _parse_bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes")


def load_pack_model(path) -> PackModel:
    cfg = read_config(path)
    if cfg.get("kind") != "pack":
        raise ValidationError(f"{path} is not a pack model")
    config = TrainConfig(
        epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
        momentum=float(cfg["momentum"]), seed=int(cfg["seed"]), decoder=cfg["decoder"],
        objective=cfg["objective"], hidden=int(cfg["hidden"]), bias=_parse_bool(cfg["bias"]),
    )
    model = PackModel.init(int(cfg["in_dim"]), int(cfg["out_dim"]), int(cfg["decoded_dim"]), config,
                           np.random.default_rng(0))
    tensors = read_tensors(path)
    names = cfg["tensors"].split(",")
    params = model.params()
    if len(tensors) != len(names) or set(names) != set(params):
        raise ValidationError(f"{path}: tensor list does not match the sidecar")
    for name, t in zip(names, tensors):
        if params[name].shape != t.shape:
            raise ShapeError(f"{name}: stored shape {t.shape} != expected {params[name].shape}")
        params[name][...] = t
    return model
