"""Epsilon-prediction denoising diffusion over latent rows, small enough for a laptop.

Variance-preserving forward process with a linear beta schedule, an MLP
denoiser conditioned on a sinusoidal step embedding, momentum SGD, and
ancestral sampling. Data are standardized per channel before training and
de-standardized after sampling.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .errors import DivergenceError, RangeError, ShapeError, ValidationError
from .featureio import read_tensors, write_tensors
from .metrics import frechet_between


@dataclass
class DiffusionSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def beta_start(self) -> float:
        return float(self.beta[0])

    @property
    def beta_end(self) -> float:
        return float(self.beta[-1])


def make_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise ValidationError("T must be at least 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValidationError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T)
    return DiffusionSchedule(beta, np.cumprod(1.0 - beta))


def forward_noise(z0, t, noise, sched: DiffusionSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) noise; ``t`` is a scalar or one step per row."""
    z0 = np.asarray(z0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if z0.shape != noise.shape:
        raise ShapeError(f"z0 {z0.shape} and noise {noise.shape} differ")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.T):
        raise RangeError(f"step outside [0, {sched.T})")
    ab = sched.alpha_bar[t]
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise


def time_embedding(t, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass
class DiffusionBatch:
    z_t: np.ndarray
    t: np.ndarray
    eps: np.ndarray


class Denoiser:
    """MLP eps_phi([z_t, emb(t)]) -> eps with SiLU between layers."""

    def __init__(self, dim: int, hidden: tuple[int, ...] = (64, 64), time_dim: int = 16,
                 rng: np.random.Generator | None = None):
        if time_dim % 2:
            raise ValidationError("time_dim must be even")
        self.dim = dim
        self.hidden = tuple(int(h) for h in hidden)
        self.time_dim = time_dim
        self.net = nn.mlp("den", [dim + time_dim, *self.hidden, dim], rng, activation="silu")

    def params(self) -> dict[str, np.ndarray]:
        return self.net.params()

    @property
    def param_count(self) -> int:
        return nn.count_params(self.params())

    def _inputs(self, z_t, t) -> np.ndarray:
        z_t = np.asarray(z_t, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t), (z_t.shape[0],))
        return np.concatenate([z_t, time_embedding(t, self.time_dim)], axis=1)

    def predict(self, z_t, t) -> np.ndarray:
        return self.net.forward(self._inputs(z_t, t))

    def loss(self, batch: DiffusionBatch, objective: str = "l2") -> float:
        return nn.loss_and_grad(self.predict(batch.z_t, batch.t), batch.eps, "l2")[0]

    def loss_and_grad(self, batch: DiffusionBatch, objective: str = "l2"):
        out = self.net.forward(self._inputs(batch.z_t, batch.t))
        loss, g = nn.loss_and_grad(out, batch.eps, "l2")
        _, grads = self.net.backward(g)
        return loss, grads


def param_count_for(dim: int, hidden: tuple[int, ...], time_dim: int) -> int:
    sizes = [dim + time_dim, *hidden, dim]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def matched_hidden(dim: int, target: int, depth: int = 2, time_dim: int = 16) -> tuple[int, ...]:
    """Equal-width hidden layers whose parameter count lands nearest ``target``."""
    best, best_gap = (1,) * depth, None
    for h in range(1, 4096):
        n = param_count_for(dim, (h,) * depth, time_dim)
        gap = abs(n - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = (h,) * depth, gap
        if n > target:
            break
    return best


def sample_batch(z0, sched: DiffusionSchedule, rng: np.random.Generator) -> DiffusionBatch:
    z0 = np.asarray(z0, dtype=np.float64)
    t = rng.integers(0, sched.T, size=z0.shape[0])
    eps = rng.standard_normal(z0.shape)
    return DiffusionBatch(forward_noise(z0, t, eps, sched), t, eps)


def diffusion_loss(model: Denoiser, z0, sched: DiffusionSchedule, rng: np.random.Generator) -> float:
    """Mean over rows and dims of (eps_phi(z_t, t) - eps)^2, one random step per row."""
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim != 2 or z0.shape[0] == 0:
        raise ShapeError("diffusion_loss needs a non-empty (M, d) batch")
    with np.errstate(over="ignore", invalid="ignore"):
        loss = model.loss(sample_batch(z0, sched, rng))
    if not np.isfinite(loss):
        raise DivergenceError("loss evaluation", 0)
    return loss


@dataclass
class DiffusionConfig:
    steps: int = 2000
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    time_dim: int = 16
    log_every: int = 100
    eval_rows: int = 1024

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.steps < 0 or self.batch_size <= 0 or self.lr < 0 or self.log_every <= 0:
            raise ValidationError("invalid diffusion training config")


@dataclass
class DiffusionModel:
    denoiser: Denoiser
    schedule: DiffusionSchedule
    data_mean: np.ndarray
    data_std: np.ndarray
    config: DiffusionConfig = field(default_factory=DiffusionConfig)

    @property
    def dim(self) -> int:
        return self.denoiser.dim

    def standardize(self, z) -> np.ndarray:
        return (np.asarray(z, dtype=np.float64) - self.data_mean) / self.data_std

    def destandardize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.data_std + self.data_mean


def standardization_stats(z0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = z0.mean(axis=0)
    std = z0.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def train_diffusion(
    z0,
    sched: DiffusionSchedule,
    cfg: DiffusionConfig | None = None,
    callback: Callable[[int, DiffusionModel, float], None] | None = None,
) -> tuple[DiffusionModel, list[tuple[int, float]]]:
    """Train a denoiser on standardized rows of ``z0``.

    The loss curve is evaluated every ``log_every`` steps (and at steps 0 and
    ``steps``) on a fixed evaluation batch with frozen t and noise draws, so
    curves are comparable across steps and exactly flat when ``lr == 0``.
    ``callback(step, model, loss)`` runs at the same points.
    """
    cfg = cfg or DiffusionConfig()
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim != 2 or z0.shape[0] == 0:
        raise ShapeError(f"expected non-empty (M, d) rows, got {z0.shape}")
    init_ss, train_ss, eval_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    mean, std = standardization_stats(z0)
    data = (z0 - mean) / std
    denoiser = Denoiser(z0.shape[1], cfg.hidden, cfg.time_dim, np.random.default_rng(init_ss))
    model = DiffusionModel(denoiser, sched, mean, std, cfg)

    eval_rng = np.random.default_rng(eval_ss)
    eval_idx = eval_rng.choice(len(data), size=min(cfg.eval_rows, len(data)), replace=False)
    eval_batch = sample_batch(data[np.sort(eval_idx)], sched, eval_rng)

    rng = np.random.default_rng(train_ss)
    opt = nn.MomentumSGD(denoiser.params(), cfg.lr, cfg.momentum)
    curve: list[tuple[int, float]] = []

    def log(step: int) -> None:
        loss = denoiser.loss(eval_batch)
        if not np.isfinite(loss):
            raise DivergenceError("step", step)
        curve.append((step, loss))
        if callback is not None:
            callback(step, model, loss)

    with np.errstate(over="ignore", invalid="ignore"):
        log(0)
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, len(data), size=cfg.batch_size)
            loss, grads = denoiser.loss_and_grad(sample_batch(data[idx], sched, rng))
            if not np.isfinite(loss):
                raise DivergenceError("step", step)
            opt.step(grads)
            if step % cfg.log_every == 0 or step == cfg.steps:
                log(step)
    return model, curve


def sample(model: DiffusionModel, n: int, seed: int = 0) -> np.ndarray:
    """Ancestral sampling from N(0, I), sigma_t^2 = beta_t, then de-standardization."""
    d = model.dim
    if n == 0:
        return np.empty((0, d))
    sched = model.schedule
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(sched.T - 1, -1, -1):
            beta = sched.beta[t]
            eps = model.denoiser.predict(x, t)
            x = (x - beta / np.sqrt(1.0 - sched.alpha_bar[t]) * eps) / np.sqrt(1.0 - beta)
            if t > 0:
                x = x + np.sqrt(beta) * rng.standard_normal((n, d))
    return model.destandardize(x)


def zero_model(dim: int, sched: DiffusionSchedule, hidden=(16,), time_dim: int = 16) -> DiffusionModel:
    """A denoiser that predicts zero noise everywhere, with identity standardization."""
    den = Denoiser(dim, hidden, time_dim, rng=None)
    return DiffusionModel(den, sched, np.zeros(dim), np.ones(dim),
                          DiffusionConfig(hidden=hidden, time_dim=time_dim))


def zero_model_sample_variance(sched: DiffusionSchedule) -> float:
    """Exact per-dim variance of :func:`sample` output when the denoiser predicts zero."""
    v = 1.0
    for t in range(sched.T - 1, -1, -1):
        v = v / (1.0 - sched.beta[t])
        if t > 0:
            v += sched.beta[t]
    return v


# -- raw vs packed convergence ----------------------------------------------


@dataclass
class CheckpointRow:
    representation: str
    seed: int
    checkpoint_step: int
    train_loss: float
    frechet: float


@dataclass
class ConvergenceReport:
    rows: list[CheckpointRow]
    budget: int
    seeds: list[int]
    param_counts: dict[str, int]
    hidden: dict[str, tuple[int, ...]]
    threshold_factor: float
    floors: dict[int, float] = field(default_factory=dict)
    steps_to_threshold: dict[tuple[str, int], int | None] = field(default_factory=dict)

    def curve(self, rep: str, seed: int) -> list[CheckpointRow]:
        return [r for r in self.rows if r.representation == rep and r.seed == seed]

    def median_steps(self, rep: str) -> float:
        vals = [self.steps_to_threshold[(rep, s)] for s in self.seeds]
        return float(np.median([np.inf if v is None else v for v in vals]))

    @property
    def quarter_step(self) -> int:
        steps = sorted({r.checkpoint_step for r in self.rows})
        return min(steps, key=lambda s: (abs(s - self.budget / 4), s))

    def loss_at(self, rep: str, seed: int, step: int) -> float:
        return next(r.train_loss for r in self.curve(rep, seed) if r.checkpoint_step == step)

    def quarter_loss_wins(self) -> int:
        """Seeds in which packed eval loss <= raw eval loss at the 25%-budget checkpoint."""
        q = self.quarter_step
        return sum(self.loss_at("packed", s, q) <= self.loss_at("raw", s, q) for s in self.seeds)

    def packed_not_slower(self) -> bool:
        return self.median_steps("packed") <= self.median_steps("raw")


def _run_representation(job: dict) -> list[CheckpointRow]:
    rep, seed = job["rep"], job["seed"]
    rows: list[CheckpointRow] = []
    to_gt = job["to_gt"]

    def on_checkpoint(step, model, loss):
        samples = sample(model, job["n_samples"], seed=job["sample_seed"])
        fd = frechet_between(to_gt(samples), job["reference"])
        rows.append(CheckpointRow(rep, seed, step, float(loss), fd))

    train_diffusion(job["data"], job["sched"], job["cfg"], callback=on_checkpoint)
    return rows


class _GroundTruthMap:
    """Picklable map from sample space to ground-truth subspace coordinates."""

    def __init__(self, basis, decoder=None):
        self.basis = basis
        self.decoder = decoder

    def __call__(self, x):
        if self.decoder is not None:
            x = self.decoder.decode(x)
        return np.asarray(x, dtype=np.float64) @ self.basis


def convergence_experiment(
    raw,
    packed,
    budget: int,
    seeds,
    *,
    basis,
    pack_model=None,
    cfg: DiffusionConfig | None = None,
    sched: DiffusionSchedule | None = None,
    n_checkpoints: int = 8,
    holdout: float = 0.2,
    n_samples: int = 2000,
    threshold_factor: float = 1.5,
    workers: int = 1,
) -> ConvergenceReport:
    """Train one denoiser per representation and seed and compare how fast samples converge.

    Both representations are split identically into training rows and a
    held-out tail. At each checkpoint the model's samples are mapped into the
    ground-truth subspace coordinates (packed samples through the pack
    decoder first) and compared with the held-out raw rows by Fréchet
    distance. Per seed, the threshold is ``threshold_factor`` times the best
    Fréchet distance either representation reached; steps-to-threshold is
    the first checkpoint at or under it (``None`` if never).

    ``cfg.hidden`` sizes the raw denoiser; the packed one gets equal-width
    layers with the nearest parameter count.
    """
    raw = np.asarray(raw, dtype=np.float64)
    packed = np.asarray(packed, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    if raw.ndim != 2 or packed.ndim != 2 or raw.shape[0] != packed.shape[0]:
        raise ValidationError("raw and packed must be row-aligned matrices from the same dataset")
    if basis.shape[0] != raw.shape[1]:
        raise ShapeError(f"basis rows {basis.shape[0]} != raw dim {raw.shape[1]}")
    if pack_model is not None:
        expected = pack_model.project(raw)
        scale = max(np.abs(expected).max(), 1e-12)
        if expected.shape != packed.shape or np.abs(expected - packed).max() > 1e-3 * scale:
            raise ValidationError("packed rows are not the pack model's projection of the raw rows")
    elif packed.shape[1] != raw.shape[1]:
        raise ValidationError("a pack model is required when packed and raw dims differ")
    if budget < 0:
        raise ValidationError("budget must be >= 0")

    cfg = cfg or DiffusionConfig()
    sched = sched or make_schedule()
    seeds = [int(s) for s in seeds]
    n_train = int(round(raw.shape[0] * (1.0 - holdout)))
    if not 2 <= n_train < raw.shape[0] - 1:
        raise ValidationError("holdout leaves too few rows on one side")
    reference = raw[n_train:] @ basis

    target = param_count_for(raw.shape[1], cfg.hidden, cfg.time_dim)
    hidden = {"raw": cfg.hidden,
              "packed": matched_hidden(packed.shape[1], target, len(cfg.hidden), cfg.time_dim)}
    counts = {"raw": target,
              "packed": param_count_for(packed.shape[1], hidden["packed"], cfg.time_dim)}
    if abs(counts["packed"] - target) > 0.05 * target:
        raise ValidationError(f"cannot match parameter counts within 5%: {counts}")

    data = {"raw": raw[:n_train], "packed": packed[:n_train]}
    maps = {"raw": _GroundTruthMap(basis), "packed": _GroundTruthMap(basis, pack_model)}
    log_every = max(1, budget // max(1, n_checkpoints))
    jobs = []
    for seed in seeds:
        for rep in ("raw", "packed"):
            run_cfg = DiffusionConfig(**{**asdict(cfg), "steps": budget, "seed": seed,
                                         "hidden": hidden[rep], "log_every": log_every})
            jobs.append(dict(rep=rep, seed=seed, data=data[rep], sched=sched, cfg=run_cfg,
                             to_gt=maps[rep], reference=reference, n_samples=n_samples,
                             sample_seed=10_000 + seed))

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_representation, jobs))
    else:
        results = [_run_representation(j) for j in jobs]
    rows = [r for res in results for r in res]

    report = ConvergenceReport(rows, budget, seeds, counts, hidden, threshold_factor)
    for seed in seeds:
        floor = min(r.frechet for r in rows if r.seed == seed)
        report.floors[seed] = floor
        for rep in ("raw", "packed"):
            hit = [r.checkpoint_step for r in report.curve(rep, seed)
                   if r.frechet <= threshold_factor * floor]
            report.steps_to_threshold[(rep, seed)] = min(hit) if hit else None
    return report


# -- persistence ------------------------------------------------------------


def save_diffusion_model(model: DiffusionModel, path) -> list[Path]:
    from .pack import write_config

    params = model.denoiser.params()
    names = list(params) + ["data_mean", "data_std"]
    tensors = list(params.values()) + [model.data_mean, model.data_std]
    write_tensors(tensors, path)
    cfg = asdict(model.config)
    cfg["hidden"] = "x".join(str(h) for h in model.config.hidden)
    cfg.update(dim=model.dim, T=model.schedule.T, beta_start=repr(model.schedule.beta_start),
               beta_end=repr(model.schedule.beta_end))
    write_config(path, "denoiser", cfg, names)
    return [Path(path), Path(str(path) + ".cfg")]


def load_diffusion_model(path) -> DiffusionModel:
    from .pack import read_config

    cfg = read_config(path)
    if cfg.get("kind") != "denoiser":
        raise ValidationError(f"{path} is not a denoiser model")
    hidden = tuple(int(h) for h in cfg["hidden"].split("x") if h)
    config = DiffusionConfig(
        steps=int(cfg["steps"]), batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
        momentum=float(cfg["momentum"]), seed=int(cfg["seed"]), hidden=hidden,
        time_dim=int(cfg["time_dim"]), log_every=int(cfg["log_every"]),
        eval_rows=int(cfg["eval_rows"]),
    )
    sched = make_schedule(int(cfg["T"]), float(cfg["beta_start"]), float(cfg["beta_end"]))
    den = Denoiser(int(cfg["dim"]), hidden, config.time_dim, rng=None)
    tensors = read_tensors(path)
    names = cfg["tensors"].split(",")
    if len(tensors) != len(names):
        raise ValidationError(f"{path}: tensor list does not match the sidecar")
    stored = dict(zip(names, tensors))
    params = den.params()
    for name, p in params.items():
        if name not in stored or stored[name].shape != p.shape:
            raise ShapeError(f"{path}: missing or misshapen tensor {name}")
        p[...] = stored[name]
    return DiffusionModel(den, sched, stored["data_mean"].astype(np.float64),
                          stored["data_std"].astype(np.float64), config)
