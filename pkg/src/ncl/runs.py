"""Run directories: the manifest, content hashes and small file helpers."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

MANIFEST_NAME = "run.json"
RUN_MANIFEST_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, Path):
        return str(o)
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def tree_hash(path) -> str:
    """Hash of every file under ``path`` (relative names and bytes, sorted)."""
    path = Path(path)
    h = hashlib.sha256()
    files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
    for f in files:
        if f.name == MANIFEST_NAME:
            continue  # timestamps live here
        h.update(str(f.relative_to(path) if f != path else f.name).encode())
        h.update(b"\0")
        h.update(f.read_bytes())
    return h.hexdigest()


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class RunManifest:
    """What a command was asked to do and what it produced.

    ``content_hash`` covers the command, effective config, seed and input
    hashes; it is independent of timestamps, so two runs with the same hash
    should produce byte-identical artifacts.
    """

    command: str
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)  # name -> content hash
    artifacts: dict = field(default_factory=dict)  # name -> relative path
    artifact_hashes: dict = field(default_factory=dict)
    started: str = field(default_factory=_now)
    finished: str | None = None
    version: int = RUN_MANIFEST_VERSION

    @property
    def content_hash(self):
        return sha256_bytes(canonical_json(
            {"command": self.command, "config": self.config, "seed": self.seed, "inputs": self.inputs}
        ).encode())

    def add_artifact(self, name, path, root):
        path = Path(path)
        self.artifacts[name] = str(path.relative_to(root))
        self.artifact_hashes[name] = sha256_bytes(path.read_bytes())

    def to_dict(self):
        d = asdict(self)
        d["content_hash"] = self.content_hash
        return d

    def write(self, out_dir):
        self.finished = _now()
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True, default=_jsonable) + "\n")
        return path

    @classmethod
    def read(cls, run_dir):
        d = json.loads((Path(run_dir) / MANIFEST_NAME).read_text())
        d.pop("content_hash", None)
        return cls(**d)


def write_rows_csv(path, rows):
    """Write a list of flat dicts; columns follow the first row's key order."""
    path = Path(path)
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if isinstance(r[c], float) and math.isnan(r[c]) else repr(r[c]) if isinstance(r[c], float) else r[c]
                        for c in cols])
    return path
