"""Run manifests: plain-text provenance records written next to every output."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    seeds: list[int] = field(default_factory=list)
    inputs: list[tuple[str, str]] = field(default_factory=list)
    outputs: list[tuple[str, str]] = field(default_factory=list)
    version: str = __version__
    wall_time: float = 0.0

    def add_input(self, path) -> None:
        self.inputs.append((str(path), sha256_file(path)))

    def add_output(self, path) -> None:
        self.outputs.append((str(path), sha256_file(path)))

    def render(self) -> str:
        lines = [f"command={self.command}", "seeds=" + ",".join(str(s) for s in self.seeds),
                 f"version={self.version}"]
        lines += [f"input={p} sha256={h}" for p, h in self.inputs]
        lines += [f"output={p} sha256={h}" for p, h in self.outputs]
        lines.append(f"wall_time={self.wall_time:.3f}")
        return "\n".join(lines) + "\n"

    def write_alongside(self) -> list[Path]:
        """Write ``<output>.manifest`` for every recorded output."""
        text = self.render()
        written = []
        for p, _ in self.outputs:
            mp = Path(p + ".manifest")
            mp.write_text(text)
            written.append(mp)
        return written


def parse_manifest(text: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for line in text.splitlines():
        key, _, value = line.partition("=")
        out.setdefault(key, []).append(value)
    return out


def verify_manifest(path: str | Path) -> bool:
    """True when every output hash recorded in the manifest matches the file on disk."""
    fields = parse_manifest(Path(path).read_text())
    for entry in fields.get("output", []):
        p, _, h = entry.rpartition(" sha256=")
        if not Path(p).exists() or sha256_file(p) != h:
            return False
    return True
