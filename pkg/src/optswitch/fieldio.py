"""Value-field files.

A field is stored as two files: ``<stem>.bin`` holds every pair tensor as
raw little-endian float64 in C order, back to back in pair order, and
``<stem>.json`` describes the layout (offset, shape and axis names per
pair), the grid, the problem hash and the iteration record.  Axes named
``w<i>`` hold the time plant ``i`` started operating (``t - z_i``).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os

import numpy as np

from .solver import Lattice, ValueField

FORMAT = "optswitch-field/1"


def _axis_name(lab):
    return lab if lab == "x" else f"{lab[0]}{lab[1]}"


def sidecar(field, data_file, digest):
    lat = field.lattice
    arrays, offset = [], 0
    for (a, b), labels, arr in zip(lat.pairs, lat.labels, field.arrays):
        arrays.append({"a": list(a), "b": list(b), "axes": ["t"] + [_axis_name(l) for l in labels],
                       "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    k = field.k
    return {
        "format": FORMAT, "dtype": "<f8", "order": "C", "data_file": data_file, "data_sha256": digest,
        "n": lat.n, "T": lat.T, "n_t": lat.n_t, "n_steps": lat.n_steps,
        "x_nodes": lat.x_nodes.tolist(), "nu_nodes": lat.nu_nodes.tolist(), "w_nodes": lat.w_nodes.tolist(),
        "arrays": arrays, "spec_hash": field.spec_hash,
        "k": "inf" if isinstance(k, float) and math.isinf(k) else int(k),
        "iterations": int(getattr(field, "iterations", len(field.deltas))),
        "deltas": [float(d) for d in field.deltas], "converged": bool(field.converged),
        "tol": getattr(field, "tol", None),
    }


def save_field(field, stem):
    """Write ``stem.bin`` and ``stem.json``; returns both paths."""
    bin_path, json_path = stem + ".bin", stem + ".json"
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in field.arrays)
    with open(bin_path, "wb") as fh:
        fh.write(blob)
    meta = sidecar(field, os.path.basename(bin_path), hashlib.sha256(blob).hexdigest())
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return bin_path, json_path


def load_field(json_path):
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != FORMAT:
        raise ValueError(f"unknown field format {meta.get('format')!r}")
    bin_path = os.path.join(os.path.dirname(json_path), meta["data_file"])
    with open(bin_path, "rb") as fh:
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != meta["data_sha256"]:
        raise ValueError("field data does not match its sidecar checksum")
    lat = Lattice(meta["n"], meta["T"], meta["n_t"], meta["x_nodes"], meta["nu_nodes"], meta["w_nodes"],
                  n_steps=meta["n_steps"])
    arrays = []
    for entry, (a, b), shape in zip(meta["arrays"], lat.pairs, lat.shapes):
        if tuple(entry["a"]) != a or tuple(entry["b"]) != b:
            raise ValueError("pair order in sidecar does not match the mode tables")
        full = tuple(entry["shape"])
        if full[1:] != shape:
            raise ValueError(f"shape mismatch for pair {a},{b}")
        count = int(np.prod(full))
        arrays.append(np.frombuffer(blob, "<f8", count, entry["offset"]).reshape(full).copy())
    k = math.inf if meta["k"] == "inf" else meta["k"]
    fld = ValueField(lat, arrays, k, meta["deltas"], meta["converged"], meta["spec_hash"])
    fld.iterations = meta.get("iterations", len(meta["deltas"]))
    fld.tol = meta.get("tol")
    return fld


def write_convergence_csv(field, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "sup_delta"])
        for k, d in enumerate(field.deltas, start=1):
            w.writerow([k, repr(float(d))])


def parse_slice(text, n):
    """``"t,w0"`` or ``"t,w0;a=1,0;b=1,1"`` -> (axes, a, b) with a/b possibly None."""
    parts = [p.strip() for p in text.split(";") if p.strip()]
    axes = [s.strip() for s in parts[0].split(",")]
    if len(axes) != 2 or len(set(axes)) != 2:
        raise ValueError("--slice needs two distinct axis names, e.g. t,w0")
    a = b = None
    for p in parts[1:]:
        key, _, val = p.partition("=")
        vec = tuple(int(v) for v in val.split(","))
        if len(vec) != n:
            raise ValueError(f"slice mode {key} needs {n} components")
        if key.strip() == "a":
            a = vec
        elif key.strip() == "b":
            b = vec
        else:
            raise ValueError(f"unknown slice key {key!r}")
    return axes, a, b


def write_slice_csv(field, path, axes, a, b, anchor):
    """Value surface over two axes of pair ``(a, b)``; other axes sit at the grid node
    nearest to ``anchor`` (dict axis name -> coordinate)."""
    lat = field.lattice
    p = lat.index(tuple(a), tuple(b))
    names = ["t"] + [_axis_name(l) for l in lat.labels[p]]
    for ax in axes:
        if ax not in names:
            raise ValueError(f"axis {ax!r} not present for pair {a},{b}; available: {names}")
    nodes = {"t": lat.t_nodes}
    for lab in lat.labels[p]:
        nodes[_axis_name(lab)] = lat.axis_nodes(lab)
    arr = field.arrays[p]
    index = []
    for name in names:
        if name in axes:
            index.append(slice(None))
        else:
            nd = nodes[name]
            index.append(int(np.argmin(np.abs(nd - anchor.get(name, 0.0)))))
    sub = arr[tuple(index)]
    if names.index(axes[0]) > names.index(axes[1]):
        sub = sub.T
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axes[0], axes[1], "value"])
        for i, u in enumerate(nodes[axes[0]]):
            for j, v in enumerate(nodes[axes[1]]):
                w.writerow([repr(float(u)), repr(float(v)), repr(float(sub[i, j]))])
