"""Plain-text artifacts: grid rasters with JSON sidecars, CSV tables, graymaps.

Every number is written with 17 significant digits, which round-trips a
double exactly, so files produced from identical inputs are byte-identical.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .gaussian import GridDomain

MASK_TOKEN = "NA"


def fmt(x):
    """17-significant-digit text for a float (``NA`` for NaN)."""
    x = float(x)
    return MASK_TOKEN if np.isnan(x) else f"{x:.17g}"


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- grids

def sidecar_path(path):
    return Path(str(path) + ".json")


def write_grid(path, values, domain, mask=None):
    """Write a (ny, nx) raster, one grid row per line, rows in increasing y.

    Masked cells (``mask`` True or NaN values) are written as ``NA``. The
    sidecar ``<path>.json`` holds ``nx``, ``ny``, ``origin``, ``cell`` and the
    mask token.
    """
    a = np.array(values, dtype=float)
    if a.shape != domain.shape:
        raise ValueError(f"raster shape {a.shape} does not match domain {domain.shape}")
    if mask is not None:
        a[np.asarray(mask, dtype=bool)] = np.nan
    lines = [" ".join(fmt(v) for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")
    dump_json(sidecar_path(path), {**domain.to_dict(), "mask_token": MASK_TOKEN})


def read_grid(path):
    """Read a raster written by :func:`write_grid`; returns ``(values, domain, mask)``."""
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing grid header {side}")
    head = load_json(side)
    domain = GridDomain.from_dict(head)
    token = head.get("mask_token", MASK_TOKEN)
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if len(rows) != domain.ny or any(len(r) != domain.nx for r in rows):
        raise ValueError(f"{path}: raster does not match its {domain.ny}x{domain.nx} header")
    values = np.array([[np.nan if v == token else float(v) for v in r] for r in rows])
    return values, domain, np.isnan(values)


def write_pgm(path, values, vmin=None, vmax=None):
    """8-bit binary graymap for quick inspection; north up, masked cells black."""
    a = np.asarray(values, dtype=float)
    lo = np.nanmin(a) if vmin is None else vmin
    hi = np.nanmax(a) if vmax is None else vmax
    scaled = np.where(np.isnan(a), 0.0, (a - lo) / (hi - lo if hi > lo else 1.0))
    img = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)[::-1]
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


# ---------------------------------------------------------------- tables

def write_table(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path, required=()):
    """CSV with a header row as a dict of float arrays (non-numeric columns kept as str)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty table") from None
        rows = [r for r in reader if r]
    missing = [c for c in required if c not in header]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}")
    out = {}
    for k, name in enumerate(header):
        col = [r[k] for r in rows]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


def write_models(path, models):
    """Hyperplane models as CSV: x, y, s1..sp, b and fit diagnostics."""
    p = models[0].normal.size
    cols = (["x", "y"] + [f"s{k + 1}" for k in range(p)] + ["b", "objective", "duality_gap",
            "train_accuracy", "n_pos", "n_neg"])
    rows = []
    for m in models:
        d = m.diagnostics
        rows.append([float(m.location[0]), float(m.location[1])]
                    + [float(v) for v in m.normal] + [float(m.offset)]
                    + [float(d.get("objective", np.nan)), float(d.get("duality_gap", np.nan)),
                       float(d.get("train_accuracy", np.nan)),
                       int(d.get("n_pos", 0)), int(d.get("n_neg", 0))])
    write_table(path, cols, rows)


def read_models(path):
    from .svm import HyperplaneModel

    t = read_table(path, required=("x", "y", "s1", "b"))
    p = sum(1 for k in t if k.startswith("s") and k[1:].isdigit())
    normals = np.column_stack([t[f"s{k + 1}"] for k in range(p)])
    diag_keys = [k for k in ("objective", "duality_gap", "train_accuracy", "n_pos", "n_neg")
                 if k in t]
    return [HyperplaneModel(normals[i], float(t["b"][i]), (float(t["x"][i]), float(t["y"][i])),
                            {k: float(t[k][i]) for k in diag_keys})
            for i in range(normals.shape[0])]
