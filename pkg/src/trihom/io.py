"""Flat-file artifact formats.

Field files are a single text header line followed by the raw little-endian
C-order payload:

    trihom-field v1 kind=<name> dtype=<f8|u1> shape=<n1,n2,..> \
        lengths=<l1,l2,..> [key=value ...]\n
    <payload bytes>

CSV files are plain comma-separated text; floats are written with their
shortest round-trip representation so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

MAGIC = "trihom-field"
VERSION = "v1"

_DTYPES = {"f8": "<f8", "u1": "|u1", "i8": "<i8"}


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_field(path, array, *, kind, lengths, **meta):
    arr = np.asarray(array)
    if arr.dtype == np.float64:
        code = "f8"
    elif arr.dtype == np.uint8:
        code = "u1"
    elif arr.dtype == np.int64:
        code = "i8"
    else:
        arr = arr.astype(np.float64)
        code = "f8"
    tokens = [MAGIC, VERSION, f"kind={kind}", f"dtype={code}",
              "shape=" + ",".join(str(n) for n in arr.shape),
              "lengths=" + ",".join(_fmt(x) for x in lengths)]
    for key in sorted(meta):
        tokens.append(f"{key}={_fmt(meta[key])}")
    header = " ".join(tokens) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(arr.astype(_DTYPES[code])).tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    tokens = header.split()
    if tokens[:2] != [MAGIC, VERSION]:
        raise ValueError(f"{path}: not a {MAGIC} {VERSION} file")
    meta = {}
    for tok in tokens[2:]:
        key, _, value = tok.partition("=")
        meta[key] = value
    shape = tuple(int(n) for n in meta["shape"].split(","))
    arr = np.frombuffer(payload, dtype=_DTYPES[meta["dtype"]]).reshape(shape)
    meta["lengths"] = tuple(float(x) for x in meta["lengths"].split(","))
    return arr.copy(), meta


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def tensor_rows(named_tensors, mu_m=None):
    """CSV rows for tensors.csv: one row per tensor."""
    rows = []
    for name, tensor in named_tensors:
        entries = tensor.entries
        eigs = tensor.eigenvalues
        residuals = tensor.provenance.get("residuals", {})
        res_max = max(residuals.values()) if residuals else 0.0
        rows.append((
            name,
            tensor.level,
            ";".join(str(a) for a in tensor.axes),
            ";".join(repr(float(x)) for x in entries.ravel()),
            ";".join(repr(float(x)) for x in eigs),
            repr(float(tensor.provenance.get("asymmetry_defect", 0.0))),
            "" if mu_m is None else repr(float(mu_m)),
            repr(float(res_max)),
        ))
    return rows


TENSOR_HEADER = ("name", "level", "axes", "entries_row_major", "eigenvalues",
                 "symmetry_defect", "mu_m", "max_residual")
