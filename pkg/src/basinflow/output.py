"""Plain-text artifacts: field dumps, CSV tables and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .grid import RectDomain


def write_field(path, u: np.ndarray, d: RectDomain) -> Path:
    """Header line ``nx ny Lx Ly`` followed by the row-major values, one per line."""
    path = Path(path)
    u = np.asarray(u, dtype=float).reshape(d.shape)
    with open(path, "w") as fh:
        fh.write(f"{d.nx} {d.ny} {d.Lx!r} {d.Ly!r}\n")
        for v in u.ravel():
            fh.write(f"{float(v)!r}\n")
    return path


def read_field(path):
    """Inverse of :func:`write_field`; returns ``(u, domain)``."""
    with open(path) as fh:
        nx, ny, Lx, Ly = fh.readline().split()
        vals = np.array([float(line) for line in fh if line.strip()])
    d = RectDomain(float(Lx), float(Ly), int(nx), int(ny))
    if vals.size != d.size:
        raise ValueError(f"{path}: expected {d.size} values, found {vals.size}")
    return vals.reshape(d.shape), d


def write_field_csv(path, u: np.ndarray, d: RectDomain) -> Path:
    path = Path(path)
    X, Y = d.mesh
    u = np.asarray(u, dtype=float).reshape(d.shape)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for x, y, v in zip(X.ravel(), Y.ravel(), u.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_record(path, record: dict) -> Path:
    """JSON summary with sorted keys, so identical inputs give identical bytes."""
    path = Path(path)
    clean = {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in record.items()}
    path.write_text(json.dumps(clean, sort_keys=True, indent=2) + "\n")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


MANIFEST_NAME = "manifest.txt"


def write_manifest(out_dir, entries: dict) -> Path:
    """Flat ``key = value`` manifest; every other file in ``out_dir`` is hashed."""
    out_dir = Path(out_dir)
    lines = [f"{k} = {_fmt(v)}" for k, v in entries.items()]
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != MANIFEST_NAME:
            lines.append(f"file.{p.relative_to(out_dir).as_posix()}.sha256 = {sha256(p)}")
    path = out_dir / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out
