"""CSV writers for analysis outputs, and RPK1 <-> CSV conversion."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError
from .spectrum import SpectrumReport


def fmt(x) -> str:
    if x is None:
        return "none"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]], list[str]]:
    """Return (header, rows, comment lines without the leading '# ')."""
    comments, body = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:], comments


def write_spectrum_csv(report: SpectrumReport, path) -> None:
    comments = [f"elbow={fmt(report.elbow_index)}", f"effective_rank={fmt(report.effective_rank)}"]
    rows = (
        (i + 1, report.eigenvalues[i], report.explained_ratio[i], report.cumulative_ratio[i])
        for i in range(len(report))
    )
    write_csv(path, ["index", "eigenvalue", "explained_ratio", "cumulative_ratio"], rows, comments)


def write_profile_csv(profile, path) -> None:
    write_csv(path, ["radius", "energy_low_fraction"], profile)


def append_key_values(path, values: dict) -> None:
    """Append ``key,value`` rows to a CSV, writing the header if the file is new."""
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(["key", "value"])
        for k, v in values.items():
            writer.writerow([k, fmt(v)])


def tensor_to_csv(t: np.ndarray, path) -> None:
    """Rows of the last axis; the full shape goes in a ``# dims=`` comment."""
    t = np.asarray(t)
    mat = t.reshape(-1, t.shape[-1]) if t.ndim > 1 else t.reshape(-1, 1)
    header = [f"c{i}" for i in range(mat.shape[1])]
    write_csv(path, header, (list(r) for r in mat.astype(np.float64)),
              comments=["dims=" + ",".join(str(n) for n in t.shape)])


def csv_to_tensor(path) -> np.ndarray:
    _, rows, comments = read_csv(path)
    try:
        mat = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell ({exc})") from exc
    dims = next((c[5:] for c in comments if c.startswith("dims=")), None)
    if dims:
        shape = tuple(int(n) for n in dims.split(","))
        if int(np.prod(shape)) != mat.size:
            raise FormatError(f"{path}: dims {shape} do not match {mat.size} values")
        return mat.reshape(shape)
    return mat
