"""Result documents: JSON tensor files and plot-ready CSV tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .effective import EffectiveTensors


def jsonable(obj):
    """Plain JSON types; non-finite floats become ``None`` and tuple keys are joined with commas."""
    if isinstance(obj, dict):
        return {(",".join(map(str, k)) if isinstance(k, tuple) else str(k)): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(doc) -> str:
    return json.dumps(jsonable(doc), sort_keys=True, indent=2) + "\n"


def write_json(path, doc):
    Path(path).write_text(dumps(doc))


def tensors_document(eff: EffectiveTensors, config_hash: str, **extra):
    doc = {
        "config_sha256": config_hash,
        "eps_h": eff.eps_h,
        "a": eff.a,
        "kappa": eff.kappa,
        "L_h": eff.L_h,
        "M_h": eff.M_h,
        "N_h": eff.N_h,
        "P_h": eff.P_h,
        "certificates": eff.certificates,
    }
    doc.update(extra)
    return doc


def write_csv(path, rows):
    """Rows of flat dicts; the header is the union of keys in first-seen order."""
    header = []
    for row in rows:
        for k in row:
            if k not in header:
                header.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k)) for k in header})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.bool_, bool)):
        return str(bool(v)).lower()
    return v


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_nodal(path, nodes, values):
    """Nodal box field as CSV: coordinates then components."""
    dim = nodes.shape[0]
    vals = np.asarray(values, dtype=float)
    comps = vals.reshape((-1,) + nodes.shape[1:]) if vals.ndim > dim else vals[None]
    cols = [nodes[i].ravel() for i in range(dim)] + [c.ravel() for c in comps]
    names = [f"x{i}" for i in range(dim)] + [f"v{c}" for c in range(len(comps))]
    np.savetxt(path, np.stack(cols, axis=1), delimiter=",", header=",".join(names), comments="", fmt="%.17g")
