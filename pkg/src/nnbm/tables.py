"""Delimited output and run manifests.

Numbers are written with 12 significant digits and a '.' decimal point
regardless of locale.
"""

import hashlib
import json
from pathlib import Path

import numpy as np


def fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".12g")


def write_tsv(path, header, rows):
    lines = ["\t".join(header)] if header else []
    lines += ["\t".join(fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_tsv(path):
    text = Path(path).read_text().splitlines()
    return [line.split("\t") for line in text]


def write_matrix(path, a):
    """Row-major matrix with a leading line holding its size."""
    a = np.asarray(a)
    lines = [str(a.shape[0])]
    lines += ["\t".join(fmt(v) for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path):
    lines = Path(path).read_text().splitlines()
    n = int(lines[0])
    return np.array([[float(v) for v in line.split("\t")] for line in lines[1:n + 1]])


def write_trace(path, residuals):
    write_tsv(path, ["iteration", "residual"], [(k + 1, r) for k, r in enumerate(residuals)])


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def digest(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
