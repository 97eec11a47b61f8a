import numpy as np
import pytest

from repack.cli import main
from repack.featureio import read_tensor, write_tensor
from repack.manifest import parse_manifest, verify_manifest
from repack.reports import read_csv


@pytest.fixture
def features(tmp_path):
    out = tmp_path / "f.rpk"
    rc = main(["gen", "--dim", "16", "--intrinsic", "3", "--noise", "0.1", "--clusters", "2",
               "--rows", "400", "--seed", "7", "--out", str(out), "--basis-out", str(tmp_path / "u.rpk")])
    assert rc == 0
    return out


def test_gen_writes_tensor_and_manifest(features):
    assert read_tensor(features).shape == (400, 16)
    man = features.with_name("f.rpk.manifest")
    assert man.exists() and verify_manifest(man)
    fields = parse_manifest(man.read_text())
    assert fields["seeds"] == ["7"]
    assert fields["command"][0].startswith("repack gen")


def test_spectrum_csv_contract(features, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["spectrum", "--in", str(features), "--out", str(out)]) == 0
    header, rows, comments = read_csv(out)
    assert header == ["index", "eigenvalue", "explained_ratio", "cumulative_ratio"]
    assert len(rows) == 16
    assert any(c.startswith("elbow=") for c in comments)
    assert "elbow=" in capsys.readouterr().out


def test_pack_fit_and_apply(features, tmp_path):
    model = tmp_path / "p.rpkm"
    assert main(["pack", "fit", "--in", str(features), "--d", "3", "--epochs", "20",
                 "--curve", str(tmp_path / "c.csv"), "--out", str(model)]) == 0
    assert verify_manifest(str(model) + ".manifest")
    packed = tmp_path / "z.rpk"
    assert main(["pack", "apply", "--model", str(model), "--in", str(features), "--out", str(packed)]) == 0
    assert read_tensor(packed).shape == (400, 3)
    fields = parse_manifest((tmp_path / "z.rpk.manifest").read_text())
    assert len(fields["input"]) == 2


def test_missing_input_is_io_error(tmp_path, capsys):
    rc = main(["pack", "fit", "--in", str(tmp_path / "missing.rpk"), "--d", "2", "--out", str(tmp_path / "m")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("E_IO:")


def test_usage_errors_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["gen", "--dim", "4"]) == 1
    assert "E_USAGE" in capsys.readouterr().err


def test_validation_error_code(tmp_path, capsys):
    rc = main(["gen", "--dim", "4", "--intrinsic", "8", "--rows", "10", "--out", str(tmp_path / "x.rpk")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("E_VALIDATION")


def test_bad_magic_is_format_error(tmp_path, capsys):
    bad = tmp_path / "bad.rpk"
    bad.write_bytes(b"XXXX" + bytes(20))
    assert main(["spectrum", "--in", str(bad), "--out", str(tmp_path / "s.csv")]) == 1
    assert capsys.readouterr().err.startswith("E_FORMAT")


def test_divergence_exits_2(features, tmp_path, capsys):
    rc = main(["pack", "fit", "--in", str(features), "--d", "3", "--epochs", "20", "--lr", "1e6",
               "--out", str(tmp_path / "p.rpkm")])
    assert rc == 2
    assert capsys.readouterr().err.startswith("E_DIVERGENCE")


def test_freq_on_grid(features, tmp_path):
    prof = tmp_path / "prof.csv"
    rc = main(["freq", "--in", str(features), "--grid", "8", "8", "--radius", "0.5",
               "--radii", "0", "0.5", "1", "--profile", str(prof),
               "--out-low", str(tmp_path / "lo.rpk"), "--out-high", str(tmp_path / "hi.rpk")])
    assert rc == 0
    _, rows, _ = read_csv(prof)
    assert [float(r[0]) for r in rows] == [0.0, 0.5, 1.0]
    assert float(rows[-1][1]) == pytest.approx(1.0)
    z = read_tensor(features)[:64].reshape(8, 8, 16)
    rebuilt = read_tensor(tmp_path / "lo.rpk") + read_tensor(tmp_path / "hi.rpk")
    assert np.allclose(rebuilt, z, atol=1e-5)


def test_diffuse_train_sample(features, tmp_path):
    model = tmp_path / "d.rpkm"
    assert main(["diffuse", "train", "--in", str(features), "--steps", "10", "--hidden", "8",
                 "--T", "20", "--out", str(model)]) == 0
    out = tmp_path / "s.rpk"
    assert main(["diffuse", "sample", "--model", str(model), "--n", "5", "--seed", "1", "--out", str(out)]) == 0
    assert read_tensor(out).shape == (5, 16)


def test_eval_commands(tmp_path, capsys):
    a, b = tmp_path / "a.rpk", tmp_path / "b.rpk"
    write_tensor(np.zeros((16, 16)), a)
    write_tensor(np.full((16, 16), 0.1), b)
    out = tmp_path / "ev.csv"
    assert main(["eval", "psnr-ssim", "--ref", str(a), "--rec", str(b), "--out", str(out)]) == 0
    values = dict(line.split("=") for line in capsys.readouterr().out.split())
    # 0.1 is stored as float32, so only approximately 20 dB
    assert float(values["psnr"]) == pytest.approx(20.0, abs=1e-5)
    assert main(["eval", "frechet", "--a", str(a), "--b", str(a), "--out", str(out)]) == 0
    _, rows, _ = read_csv(out)
    assert [r[0] for r in rows] == ["psnr", "ssim", "frechet"]


def test_convert_roundtrip(tmp_path):
    t = np.random.default_rng(0).standard_normal((3, 4, 2)).astype(np.float32)
    write_tensor(t, tmp_path / "t.rpk")
    assert main(["convert", "--in", str(tmp_path / "t.rpk"), "--out", str(tmp_path / "t.csv")]) == 0
    assert main(["convert", "--in", str(tmp_path / "t.csv"), "--out", str(tmp_path / "u.rpk")]) == 0
    assert (tmp_path / "u.rpk").read_bytes() == (tmp_path / "t.rpk").read_bytes()
