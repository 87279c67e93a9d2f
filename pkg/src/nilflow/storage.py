"""Plain-text persistence: snapshots, the diagnostics series and JSON reports.

Every write goes to a temporary file in the target directory and is moved
into place with os.replace, so readers never see a partial file.
"""

import json
import os
import tempfile

import numpy as np

from .algebra import LieStructure
from .diagnostics import SERIES_COLUMNS
from .flow import FlowState
from .grid import Grid

SCHEMA_VERSION = 1
SNAPSHOT_COLUMNS = ("x", "g", "G11", "G12", "G13", "G22", "G23", "G33", "a1", "a2", "a3", "m12", "m13", "m23")
_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_STRICT = ((0, 1), (0, 2), (1, 2))


def fmt(v):
    """Full binary64 precision with '.' as decimal separator."""
    return "%.17g" % v


def atomic_write(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def snapshot_name(t):
    return f"t={fmt(t)}.txt"


def snapshot_text(s):
    if s.full_h:
        raise ValueError("snapshots store a single scalar h0")
    head = [
        f"schema_version: {SCHEMA_VERSION}",
        f"t: {fmt(s.t)}",
        f"N: {s.N}",
        f"L: {fmt(s.grid.L)}",
        f"group: {s.lie.kind}",
        f"c: {fmt(s.lie.c)}",
        f"h0: {fmt(s.h0)}",
        " ".join(SNAPSHOT_COLUMNS),
    ]
    cols = [s.grid.x, s.g]
    cols += [s.G[:, i, j] for i, j in _UPPER]
    cols += [s.a[:, k] for k in range(3)]
    cols += [s.m[:, i, j] for i, j in _STRICT]
    data = np.column_stack(cols)
    rows = [" ".join(fmt(v) for v in row) for row in data]
    return "\n".join(head + rows) + "\n"


def write_snapshot(directory, s):
    path = os.path.join(directory, snapshot_name(s.t))
    atomic_write(path, snapshot_text(s))
    return path


def read_snapshot(path, method="fd4"):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta = {}
    i = 0
    while ":" in lines[i]:
        key, val = lines[i].split(":", 1)
        meta[key.strip()] = val.strip()
        i += 1
    if int(meta["schema_version"]) != SCHEMA_VERSION:
        raise ValueError(f"unsupported snapshot schema {meta['schema_version']}")
    if tuple(lines[i].split()) != SNAPSHOT_COLUMNS:
        raise ValueError("unexpected snapshot columns")
    data = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:] if ln.strip()])
    N = int(meta["N"])
    if data.shape != (N, len(SNAPSHOT_COLUMNS)):
        raise ValueError("snapshot row count does not match N")
    group = meta["group"]
    lie = LieStructure.heisenberg(float(meta["c"])) if group == "heisenberg" else LieStructure.abelian()
    G = np.empty((N, 3, 3))
    for col, (i_, j_) in enumerate(_UPPER, start=2):
        G[:, i_, j_] = G[:, j_, i_] = data[:, col]
    m = np.zeros((N, 3, 3))
    for col, (i_, j_) in enumerate(_STRICT, start=11):
        m[:, i_, j_] = data[:, col]
        m[:, j_, i_] = -data[:, col]
    return FlowState(float(meta["t"]), Grid(N, float(meta["L"]), method), lie, G, data[:, 1].copy(),
                     data[:, 8:11].copy(), float(meta["h0"]), m)


def series_text(records):
    lines = [f"schema_version,{SCHEMA_VERSION}", ",".join(SERIES_COLUMNS)]
    lines += [",".join(fmt(v) for v in r.row()) for r in records]
    return "\n".join(lines) + "\n"


def read_series(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    version = int(lines[0].split(",")[1])
    cols = lines[1].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:] if ln])
    return version, cols, data.reshape(-1, len(cols))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path, obj):
    atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_jsonl(path, rows):
    atomic_write(path, "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in rows))
