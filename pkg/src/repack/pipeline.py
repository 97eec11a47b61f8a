"""End-to-end run: generate -> spectrum -> pack -> spectrum -> bands -> diffusion -> eval.

Configuration is a flat ``key=value`` file with ``#`` comments. Every stage
writes its artifacts into one directory, each with a ``.manifest`` beside
it, and ``summary.txt`` records the headline property checks.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import featureio, freqband, metrics, pack, reports, spectrum, toydiff
from .errors import ValidationError
from .manifest import RunManifest

RADII = [round(0.05 * i, 2) for i in range(21)]
FLATNESS_FRACTIONS = (0.25, 0.5, 0.75)


@dataclass
class PipelineConfig:
    dim: int = 64
    intrinsic: int = 8
    noise: float = 0.1
    clusters: int = 4
    rows: int = 4096
    seed: int = 7
    pack_d: int = 8
    pack_decoder: str = "linear"
    pack_objective: str = "l2"
    pack_epochs: int = 1200
    pack_batch: int = 256
    pack_lr: float = 0.25
    freq_radius: float = 0.25
    grid_h: int = 16
    grid_w: int = 16
    diff_budget: int = 2000
    diff_seeds: int = 3
    diff_batch: int = 128
    diff_lr: float = 0.05
    diff_T: int = 100
    diff_hidden: int = 64
    diff_checkpoints: int = 8
    diff_samples: int = 2000
    pca_gap_tolerance: float = 0.05


def parse_config(text: str) -> PipelineConfig:
    types = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in types:
            raise ValidationError(f"config line {n}: unknown or malformed entry {raw!r}")
        conv = {"int": int, "float": float, "str": str}[types[key]]
        try:
            values[key] = conv(value)
        except ValueError as exc:
            raise ValidationError(f"config line {n}: bad value for {key}: {value!r}") from exc
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text())


def _verdict(ok: bool | None) -> str:
    return "not applicable" if ok is None else ("pass" if ok else "fail")


def run_pipeline(cfg: PipelineConfig, out_dir, workers: int = 1, command: str = "repack run") -> dict:
    """Run every stage and return the summary as a dict of property -> verdict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    written: list[Path] = []

    # generate
    syn = featureio.SyntheticSpec(cfg.dim, cfg.intrinsic, cfg.noise, cfg.clusters, cfg.seed)
    Z, U, labels = featureio.gen_synthetic_features(syn, cfg.rows)
    featureio.write_tensor(Z, out / "features.rpk")
    featureio.write_tensor(U, out / "utrue.rpk")
    written += [out / "features.rpk", out / "utrue.rpk"]
    # downstream stages see exactly what was stored
    Z = featureio.read_tensor(out / "features.rpk").astype(np.float64)
    U = featureio.read_tensor(out / "utrue.rpk").astype(np.float64)

    # raw spectrum
    raw_spec = spectrum.pca_spectrum(Z)
    reports.write_spectrum_csv(raw_spec, out / "spectrum_raw.csv")
    written.append(out / "spectrum_raw.csv")

    # pack
    tcfg = pack.TrainConfig(epochs=cfg.pack_epochs, batch_size=cfg.pack_batch, lr=cfg.pack_lr,
                            seed=cfg.seed, decoder=cfg.pack_decoder, objective=cfg.pack_objective)
    model, curve = pack.train_pack(Z, cfg.pack_d, tcfg)
    written += pack.save_pack_model(model, out / "pack.rpkm")
    reports.write_csv(out / "pack_loss.csv", ["epoch", "loss"], enumerate(curve))
    written.append(out / "pack_loss.csv")
    packed = model.project(Z)
    featureio.write_tensor(packed, out / "packed.rpk")
    written.append(out / "packed.rpk")

    packed_spec = spectrum.pca_spectrum(packed)
    reports.write_spectrum_csv(packed_spec, out / "spectrum_packed.csv")
    written.append(out / "spectrum_packed.csv")

    # frequency bands on the first grid_h x grid_w rows
    n_grid = cfg.grid_h * cfg.grid_w
    if n_grid > cfg.rows:
        raise ValidationError("grid larger than the number of generated rows")
    raw_grid = featureio.unflatten_spatial(Z[:n_grid], cfg.grid_h, cfg.grid_w)
    raw3 = freqband.pca_channels(raw_grid, 3)
    packed_grid = featureio.unflatten_spatial(packed[:n_grid], cfg.grid_h, cfg.grid_w)
    featureio.write_tensor(raw3, out / "raw_pca3.rpk")
    written.append(out / "raw_pca3.rpk")
    reports.write_profile_csv(freqband.band_energy_profile(raw3, RADII), out / "freq_raw.csv")
    reports.write_profile_csv(freqband.band_energy_profile(packed_grid, RADII), out / "freq_packed.csv")
    written += [out / "freq_raw.csv", out / "freq_packed.csv"]

    # diffusion convergence
    dcfg = toydiff.DiffusionConfig(batch_size=cfg.diff_batch, lr=cfg.diff_lr,
                                   hidden=(cfg.diff_hidden, cfg.diff_hidden))
    sched = toydiff.make_schedule(cfg.diff_T)
    seeds = list(range(cfg.seed, cfg.seed + cfg.diff_seeds))
    conv = toydiff.convergence_experiment(
        Z, packed, cfg.diff_budget, seeds, basis=U, pack_model=model, cfg=dcfg, sched=sched,
        n_checkpoints=cfg.diff_checkpoints, n_samples=cfg.diff_samples, workers=workers)
    write_convergence_csv(conv, out / "convergence.csv")
    written.append(out / "convergence.csv")

    # eval
    recon = model.reconstruct(Z)
    lo, hi = Z.min(), Z.max()
    ref_img = (raw_grid - lo) / (hi - lo)
    rec_img = (featureio.unflatten_spatial(recon[:n_grid], cfg.grid_h, cfg.grid_w) - lo) / (hi - lo)
    pca_core, _, _ = pack.pca_truncate(Z, cfg.pack_d)
    pack_mse = float(np.mean((recon - Z) ** 2))
    pca_mse = float(np.mean((pca_core - Z) ** 2))
    ev = {
        "pack_mse": pack_mse,
        "pca_mse": pca_mse,
        "frechet_recon": metrics.frechet_between(Z @ U, recon @ U),
        "psnr": metrics.psnr(ref_img, rec_img, 1.0),
        "ssim": metrics.ssim(ref_img, rec_img, 1.0) if min(cfg.grid_h, cfg.grid_w) >= 11 else None,
        "band_low_fraction_raw_pca3": freqband.band_split(raw3, cfg.freq_radius).low_fraction,
        "band_low_fraction_packed": freqband.band_split(packed_grid, cfg.freq_radius).low_fraction,
    }
    reports.write_csv(out / "eval.csv", ["key", "value"], ev.items())
    written.append(out / "eval.csv")

    # headline checks
    elbow = raw_spec.elbow_index
    elbow_ok = elbow is not None and abs(elbow - cfg.intrinsic) <= 1
    if cfg.pack_decoder == "linear" and cfg.pack_objective == "l2":
        gap_ok = pack_mse <= (1 + cfg.pca_gap_tolerance) * pca_mse
    else:
        gap_ok = None
    flat = {f: (packed_spec.cumulative_at_fraction(f), raw_spec.cumulative_at_fraction(f))
            for f in FLATNESS_FRACTIONS}
    flat_ok = all(p <= r for p, r in flat.values())
    if cfg.pack_d == cfg.dim or cfg.diff_budget == 0:
        conv_ok = None
    else:
        needed = -(-2 * len(seeds) // 3)  # at least two thirds of the seeds
        conv_ok = conv.packed_not_slower() and conv.quarter_loss_wins() >= needed

    summary = {
        "elbow_recovery": _verdict(elbow_ok),
        "pca_optimality_gap": _verdict(gap_ok),
        "spectral_flatness": _verdict(flat_ok),
        "convergence_ordering": _verdict(conv_ok),
    }
    detail = {
        "elbow_index": elbow,
        "intrinsic_dim": cfg.intrinsic,
        "effective_rank_raw": raw_spec.effective_rank,
        "effective_rank_packed": packed_spec.effective_rank,
        "pack_mse_over_pca_mse": pack_mse / pca_mse if pca_mse > 0 else None,
        **{f"flatness_f{f}": f"packed={p!r} raw={r!r}" for f, (p, r) in flat.items()},
        "median_steps_packed": conv.median_steps("packed"),
        "median_steps_raw": conv.median_steps("raw"),
        "quarter_loss_wins": f"{conv.quarter_loss_wins()}/{len(seeds)}",
        "param_counts": f"raw={conv.param_counts['raw']} packed={conv.param_counts['packed']}",
    }
    lines = [f"{k}={v}" for k, v in summary.items()] + [f"# {k}={reports.fmt(v)}" for k, v in detail.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    written.append(out / "summary.txt")

    manifest = RunManifest(command=command, seeds=[cfg.seed, *seeds])
    for p in written:
        manifest.add_output(p)
    manifest.wall_time = time.perf_counter() - t0
    manifest.write_alongside()
    return summary


def write_convergence_csv(report: toydiff.ConvergenceReport, path) -> None:
    comments = [f"threshold_factor={report.threshold_factor!r}"]
    comments += [f"floor seed={s} frechet={report.floors[s]!r}" for s in report.seeds]
    comments += [f"steps_to_threshold {rep} seed={s}={reports.fmt(v)}"
                 for (rep, s), v in sorted(report.steps_to_threshold.items(), key=lambda kv: (kv[0][1], kv[0][0]))]
    rows = ((r.representation, r.seed, r.checkpoint_step, r.train_loss, r.frechet) for r in report.rows)
    reports.write_csv(path, ["representation", "seed", "checkpoint_step", "train_loss", "frechet"],
                      rows, comments)
