"""On-disk layout of generated datasets and runs: window packs and hashed manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .nn import dump_checkpoint, load_checkpoint
from .training import LabeledWindow

MANIFEST = "manifest.json"


class StalenessError(RuntimeError):
    """An artifact on disk was produced from a different configuration."""


def pack_windows(items: list[LabeledWindow], meta: dict | None = None) -> bytes:
    """Serialise windows into one deterministic checkpoint-format blob."""
    arrays: dict[str, np.ndarray] = {}
    if items:
        arrays["inputs"] = np.vstack([w.inputs for w in items])
        arrays["targets"] = np.stack([w.target for w in items])
        with_ode = [w for w in items if w.theta is not None]
        if with_ode:
            if len(with_ode) != len(items):
                raise ValueError("either all windows carry ODE data or none do")
            arrays["theta"] = np.vstack([w.theta for w in items])
            arrays["dxdt"] = np.concatenate([w.dxdt for w in items])
    header = {"rows": [w.rows for w in items],
              "theta_rows": [0 if w.theta is None else w.theta.shape[0] for w in items],
              "keys": [[_plain(k) for k in w.key] for w in items],
              "meta": meta or {}}
    return dump_checkpoint(arrays, header)


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v if isinstance(v, (int, float, str, bool)) or v is None else str(v)


def unpack_windows(blob: bytes) -> tuple[list[LabeledWindow], dict]:
    arrays, header = load_checkpoint(blob)
    rows, trows, keys = header["rows"], header["theta_rows"], header["keys"]
    out = []
    r = t = 0
    for i, (n, m) in enumerate(zip(rows, trows)):
        theta = dxdt = None
        if "theta" in arrays:
            theta, dxdt = arrays["theta"][t:t + m], arrays["dxdt"][t:t + m]
            t += m
        out.append(LabeledWindow(arrays["inputs"][r:r + n], arrays["targets"][i], theta, dxdt,
                                 key=tuple(keys[i])))
        r += n
    return out, header["meta"]


def save_windows(path: Path, items: list[LabeledWindow], meta: dict | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pack_windows(items, meta))


def load_windows(path: Path) -> list[LabeledWindow]:
    return unpack_windows(Path(path).read_bytes())[0]


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(root: Path, info: dict) -> dict:
    """Record the sha256 of every file under ``root`` next to ``info``."""
    root = Path(root)
    files = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            files[p.relative_to(root).as_posix()] = file_digest(p)
    manifest = {**info, "files": files}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(root: Path) -> dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {root}; run the producing command first")
    return json.loads(path.read_text())


def check_manifest(root: Path, key: str, expected: str, what: str) -> dict:
    manifest = read_manifest(root)
    found = manifest.get(key)
    if found != expected:
        raise StalenessError(f"{what} in {root} was built with {key}={found}, the current "
                             f"configuration gives {expected}; regenerate with --force")
    return manifest


def verify_files(root: Path, manifest: dict) -> None:
    for rel, digest in manifest.get("files", {}).items():
        p = Path(root) / rel
        if not p.exists() or file_digest(p) != digest:
            raise StalenessError(f"{p} is missing or was modified after its manifest was written")


__all__ = [
    "MANIFEST", "StalenessError", "check_manifest", "file_digest", "load_windows",
    "pack_windows", "read_manifest", "save_windows", "unpack_windows", "verify_files",
    "write_manifest",
]
