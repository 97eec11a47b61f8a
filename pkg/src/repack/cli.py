"""``repack`` command-line entry point.

Exit codes: 0 success, 1 validation / format / I/O / usage errors, 2 training
divergence. Failures print one ``CODE: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import featureio, freqband, metrics, pack, reports, spectrum, toydiff
from .errors import RepackError, ValidationError
from .manifest import RunManifest


class UsageError(RepackError):
    code = "E_USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("REPACK_THREADS", "1")))
    except ValueError:
        return 1


def _read(path) -> np.ndarray:
    return featureio.read_tensor(path)


def _matrix(path) -> np.ndarray:
    t = _read(path).astype(np.float64)
    if t.ndim == 3:
        t = featureio.flatten_spatial(t)
    if t.ndim != 2:
        raise ValidationError(f"{path}: expected a rank-2 or rank-3 tensor, got rank {t.ndim}")
    return t


def _kv(values: dict, out: str | None) -> None:
    for k, v in values.items():
        print(f"{k}={reports.fmt(v)}")
    if out:
        reports.append_key_values(out, values)


# -- subcommands ------------------------------------------------------------


def cmd_gen(args, man: RunManifest):
    spec = featureio.SyntheticSpec(args.dim, args.intrinsic, args.noise, args.clusters, args.seed)
    Z, U, labels = featureio.gen_synthetic_features(spec, args.rows)
    man.seeds = [args.seed]
    featureio.write_tensor(Z, args.out)
    outs = [args.out]
    if args.basis_out:
        featureio.write_tensor(U, args.basis_out)
        outs.append(args.basis_out)
    if args.labels_out:
        featureio.write_tensor(labels.astype(np.float32), args.labels_out)
        outs.append(args.labels_out)
    return outs


def cmd_spectrum(args, man):
    man.add_input(args.inp)
    report = spectrum.pca_spectrum(_matrix(args.inp))
    reports.write_spectrum_csv(report, args.out)
    print(f"elbow={reports.fmt(report.elbow_index)}")
    print(f"effective_rank={reports.fmt(report.effective_rank)}")
    return [args.out]


def cmd_pack_fit(args, man):
    man.add_input(args.inp)
    Z = _matrix(args.inp)
    cfg = pack.TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                           momentum=args.momentum, seed=args.seed, decoder=args.decoder,
                           objective=args.objective, hidden=args.hidden, bias=args.bias)
    man.seeds = [args.seed]
    model, curve = pack.train_pack(Z, args.d, cfg)
    outs = pack.save_pack_model(model, args.out)
    if args.curve:
        reports.write_csv(args.curve, ["epoch", "loss"], enumerate(curve))
        outs.append(args.curve)
    print(f"final_loss={curve[-1]!r}")
    print(f"params={model.projector.param_count}")
    return outs


def cmd_pack_apply(args, man):
    man.add_input(args.model)
    man.add_input(args.inp)
    model = pack.load_pack_model(args.model)
    t = _read(args.inp).astype(np.float64)
    if t.ndim == 3:
        h, w, _ = t.shape
        out = featureio.unflatten_spatial(model.project(featureio.flatten_spatial(t)), h, w)
    else:
        out = model.project(t)
    featureio.write_tensor(out, args.out)
    return [args.out]


def cmd_freq(args, man):
    man.add_input(args.inp)
    z = _read(args.inp).astype(np.float64)
    if z.ndim == 2:
        if not args.grid:
            raise ValidationError("rank-2 input needs --grid H W")
        h, w = args.grid
        if z.shape[0] < h * w:
            raise ValidationError(f"{z.shape[0]} rows cannot fill a {h}x{w} grid")
        z = featureio.unflatten_spatial(z[: h * w], h, w)
    split = freqband.band_split(z, args.radius)
    outs = []
    if args.out_low:
        featureio.write_tensor(split.z_low, args.out_low)
        outs.append(args.out_low)
    if args.out_high:
        featureio.write_tensor(split.z_high, args.out_high)
        outs.append(args.out_high)
    if args.profile:
        radii = args.radii or [round(0.05 * i, 2) for i in range(21)]
        reports.write_profile_csv(freqband.band_energy_profile(z, radii), args.profile)
        outs.append(args.profile)
    if args.pca3:
        featureio.write_tensor(freqband.pca_channels(z, 3), args.pca3)
        outs.append(args.pca3)
    print(f"energy_low={split.energy_low!r}")
    print(f"energy_high={split.energy_high!r}")
    return outs


def _schedule(args):
    return toydiff.make_schedule(args.T, args.beta_start, args.beta_end)


def cmd_diffuse_train(args, man):
    man.add_input(args.inp)
    z = _matrix(args.inp)
    cfg = toydiff.DiffusionConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                                  momentum=args.momentum, seed=args.seed, hidden=tuple(args.hidden),
                                  log_every=args.log_every)
    man.seeds = [args.seed]
    model, curve = toydiff.train_diffusion(z, _schedule(args), cfg)
    outs = toydiff.save_diffusion_model(model, args.out)
    if args.curve:
        reports.write_csv(args.curve, ["step", "loss"], curve)
        outs.append(args.curve)
    print(f"final_loss={curve[-1][1]!r}")
    return outs


def cmd_diffuse_sample(args, man):
    man.add_input(args.model)
    man.seeds = [args.seed]
    if args.n < 1:
        raise ValidationError("--n must be at least 1 to write a tensor")
    model = toydiff.load_diffusion_model(args.model)
    featureio.write_tensor(toydiff.sample(model, args.n, args.seed), args.out)
    return [args.out]


def cmd_diffuse_compare(args, man):
    from .pipeline import write_convergence_csv

    for p in (args.raw, args.packed, args.pack_model, args.basis):
        if p:
            man.add_input(p)
    raw = _matrix(args.raw)
    packed = _matrix(args.packed)
    model = pack.load_pack_model(args.pack_model) if args.pack_model else None
    basis = _read(args.basis).astype(np.float64)
    seeds = list(range(args.seed, args.seed + args.seeds))
    man.seeds = seeds
    cfg = toydiff.DiffusionConfig(batch_size=args.batch, lr=args.lr, hidden=tuple(args.hidden))
    report = toydiff.convergence_experiment(
        raw, packed, args.budget, seeds, basis=basis, pack_model=model, cfg=cfg,
        sched=_schedule(args), n_checkpoints=args.checkpoints, n_samples=args.samples,
        workers=_threads())
    write_convergence_csv(report, args.out)
    print(f"median_steps_raw={report.median_steps('raw')!r}")
    print(f"median_steps_packed={report.median_steps('packed')!r}")
    print(f"quarter_loss_wins={report.quarter_loss_wins()}/{len(seeds)}")
    return [args.out]


def cmd_eval_frechet(args, man):
    man.add_input(args.a)
    man.add_input(args.b)
    fd = metrics.frechet_between(_matrix(args.a), _matrix(args.b))
    _kv({"frechet": fd}, args.out)
    return [args.out] if args.out else []


def cmd_eval_psnr_ssim(args, man):
    man.add_input(args.ref)
    man.add_input(args.rec)
    ref, rec = _read(args.ref), _read(args.rec)
    values = {"psnr": metrics.psnr(ref, rec, args.peak)}
    if ref.ndim in (2, 3) and min(ref.shape[:2]) >= 11:
        values["ssim"] = metrics.ssim(ref, rec, args.peak)
    _kv(values, args.out)
    return [args.out] if args.out else []


def cmd_convert(args, man):
    man.add_input(args.inp)
    src, dst = Path(args.inp), Path(args.out)
    if src.suffix == ".csv" and dst.suffix != ".csv":
        featureio.write_tensor(reports.csv_to_tensor(src), dst)
    elif dst.suffix == ".csv":
        reports.tensor_to_csv(_read(src), dst)
    else:
        raise ValidationError("one side of convert must be a .csv file")
    return [args.out]


def cmd_run(args, man):
    from .pipeline import load_config, run_pipeline

    man.add_input(args.config)
    cfg = load_config(args.config)
    summary = run_pipeline(cfg, args.out_dir, workers=_threads(), command=man.command)
    for k, v in summary.items():
        print(f"{k}={v}")
    return []  # the pipeline writes its own manifests


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="repack", description="Representation packing lab.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic features near a known subspace")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--intrinsic", type=int, required=True)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--clusters", type=int, default=4)
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--basis-out", help="also write the true (D, d) basis here")
    g.add_argument("--labels-out", help="also write mixture labels here")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("spectrum", help="PCA spectrum CSV with elbow and effective rank")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    pk = sub.add_parser("pack", help="fit or apply a packing model")
    pks = pk.add_subparsers(dest="pack_cmd", required=True, parser_class=_Parser)
    fit = pks.add_parser("fit")
    fit.add_argument("--in", dest="inp", required=True)
    fit.add_argument("--d", type=int, required=True)
    fit.add_argument("--decoder", choices=["linear", "mlp"], default="linear")
    fit.add_argument("--objective", choices=["l1", "l2"], default="l2")
    fit.add_argument("--epochs", type=int, default=1200)
    fit.add_argument("--batch", type=int, default=256)
    fit.add_argument("--lr", type=float, default=0.25)
    fit.add_argument("--momentum", type=float, default=0.9)
    fit.add_argument("--hidden", type=int, default=64, help="mlp decoder width")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--bias", action="store_true", help="give the projector a bias (d extra params)")
    fit.add_argument("--curve", help="write the per-epoch loss curve CSV here")
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_pack_fit)
    ap = pks.add_parser("apply")
    ap.add_argument("--model", required=True)
    ap.add_argument("--in", dest="inp", required=True)
    ap.add_argument("--out", required=True)
    ap.set_defaults(func=cmd_pack_apply)

    f = sub.add_parser("freq", help="low/high band split and energy profile")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--radius", type=float, default=0.25)
    f.add_argument("--out-low")
    f.add_argument("--out-high")
    f.add_argument("--profile")
    f.add_argument("--radii", type=float, nargs="+")
    f.add_argument("--grid", type=int, nargs=2, metavar=("H", "W"),
                   help="lay the first H*W rows of a rank-2 input out as a grid")
    f.add_argument("--pca3", help="write the top-3 principal channel latent here")
    f.set_defaults(func=cmd_freq)

    df = sub.add_parser("diffuse", help="toy diffusion: train, sample, compare")
    dfs = df.add_subparsers(dest="diffuse_cmd", required=True, parser_class=_Parser)

    def schedule_args(q):
        q.add_argument("--T", type=int, default=100)
        q.add_argument("--beta-start", type=float, default=1e-4)
        q.add_argument("--beta-end", type=float, default=0.02)

    tr = dfs.add_parser("train")
    tr.add_argument("--in", dest="inp", required=True)
    tr.add_argument("--steps", type=int, default=2000)
    tr.add_argument("--batch", type=int, default=128)
    tr.add_argument("--lr", type=float, default=0.05)
    tr.add_argument("--momentum", type=float, default=0.9)
    tr.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    tr.add_argument("--log-every", type=int, default=100)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--curve")
    tr.add_argument("--out", required=True)
    schedule_args(tr)
    tr.set_defaults(func=cmd_diffuse_train)

    sm = dfs.add_parser("sample")
    sm.add_argument("--model", required=True)
    sm.add_argument("--n", type=int, required=True)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_diffuse_sample)

    cp = dfs.add_parser("compare")
    cp.add_argument("--raw", required=True)
    cp.add_argument("--packed", required=True)
    cp.add_argument("--pack-model")
    cp.add_argument("--basis", required=True)
    cp.add_argument("--budget", type=int, default=2000)
    cp.add_argument("--seeds", type=int, default=3, help="number of seeds, counting up from --seed")
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--batch", type=int, default=128)
    cp.add_argument("--lr", type=float, default=0.05)
    cp.add_argument("--hidden", type=int, nargs="+", default=[64, 64], help="raw denoiser widths")
    cp.add_argument("--checkpoints", type=int, default=8)
    cp.add_argument("--samples", type=int, default=2000)
    cp.add_argument("--out", required=True)
    schedule_args(cp)
    cp.set_defaults(func=cmd_diffuse_compare)

    ev = sub.add_parser("eval", help="Fréchet distance, PSNR and SSIM")
    evs = ev.add_subparsers(dest="eval_cmd", required=True, parser_class=_Parser)
    fr = evs.add_parser("frechet")
    fr.add_argument("--a", required=True)
    fr.add_argument("--b", required=True)
    fr.add_argument("--out")
    fr.set_defaults(func=cmd_eval_frechet)
    ps = evs.add_parser("psnr-ssim")
    ps.add_argument("--ref", required=True)
    ps.add_argument("--rec", required=True)
    ps.add_argument("--peak", type=float, default=1.0)
    ps.add_argument("--out")
    ps.set_defaults(func=cmd_eval_psnr_ssim)

    cv = sub.add_parser("convert", help="RPK1 <-> CSV for small tensors")
    cv.add_argument("--in", dest="inp", required=True)
    cv.add_argument("--out", required=True)
    cv.set_defaults(func=cmd_convert)

    rn = sub.add_parser("run", help="end-to-end pipeline from a key=value config")
    rn.add_argument("--config", required=True)
    rn.add_argument("--out-dir", required=True)
    rn.set_defaults(func=cmd_run)
    return p


def _fail(code: str, message: str, exit_code: int) -> int:
    print(f"{code}: {message}".replace("\n", " "), file=sys.stderr)
    return exit_code


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    man = RunManifest(command=shlex.join(["repack", *argv]))
    t0 = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        outputs = args.func(args, man)
        if outputs:
            for p in outputs:
                man.add_output(p)
            man.wall_time = time.perf_counter() - t0
            man.write_alongside()
    except UsageError as exc:
        return _fail(exc.code, str(exc), 1)
    except RepackError as exc:
        return _fail(exc.code, str(exc), exc.exit_code)
    except FileNotFoundError as exc:
        return _fail("E_IO", f"{exc.filename}: no such file", 1)
    except OSError as exc:
        return _fail("E_IO", str(exc), 1)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
