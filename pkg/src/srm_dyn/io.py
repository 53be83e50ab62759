"""CSV readers and writers.

Every file is a plain CSV table optionally preceded by ``# key=value``
metadata lines.  Floats are written with ``repr`` so a round trip is exact.

Layouts
-------
dataset      ``# state_bound=B`` then ``traj_id,t,x0,...,x{n-1}``, one row per
             (trajectory, time) pair, trajectory-major.
kernel model ``# kind=kernel``, ``# kernel=<json>``, ``# clip_bound=B``, then
             ``a,p0..p{n-1},alpha0..alpha{n-1}``: anchor index, anchor state
             and its coefficient vector.
mlp model    ``# kind=mlp``, ``# n=``, ``# depth=``, ``# width=``,
             ``# activation=``, ``# clip_bound=``, then ``layer,i,j,value``
             listing each weight matrix in row-major order.
report       ``k,class_desc,train_err,penalty,srm_err,epsilon,M_used,
             true_err_mean,true_err_se,selected``; missing values are empty.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import nn, rkhs
from .core import Dataset
from .errors import InvalidInputError

REPORT_COLUMNS = ["k", "class_desc", "train_err", "penalty", "srm_err", "epsilon", "M_used",
                  "true_err_mean", "true_err_se", "selected"]
CURVE_COLUMNS = ["k", "class_desc", "train_err", "srm_err", "true_err_mean", "true_err_se"]


def fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _write(path, meta: dict, header: list, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _read(path):
    meta, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif line.strip():
                lines.append(line)
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise InvalidInputError(f"{path}: no CSV header") from None
    return meta, header, list(reader)


def save_dataset(S: Dataset, path) -> Path:
    header = ["traj_id", "t"] + [f"x{j}" for j in range(S.n)]
    rows = ([i, t] + [fmt(v) for v in S.states[i, t]] for i in range(S.N) for t in range(S.T + 1))
    return _write(path, {"state_bound": fmt(S.state_bound)}, header, rows)


def load_dataset(path, state_bound: float | None = None) -> Dataset:
    """Read a dataset CSV; ``state_bound`` overrides the file's metadata."""
    meta, header, rows = _read(path)
    if header[:2] != ["traj_id", "t"] or len(header) < 3:
        raise InvalidInputError(f"{path}: expected header traj_id,t,x0,..., got {header}")
    B = state_bound if state_bound is not None else meta.get("state_bound")
    if B is None:
        raise InvalidInputError(f"{path}: no state_bound in file and none given")
    n = len(header) - 2
    table = {}
    for row in rows:
        if len(row) != n + 2:
            raise InvalidInputError(f"{path}: row {row} has {len(row)} fields, expected {n + 2}")
        table[(int(row[0]), int(row[1]))] = [float(v) for v in row[2:]]
    ids = sorted({i for i, _ in table})
    times = sorted({t for _, t in table})
    if times != list(range(len(times))):
        raise InvalidInputError(f"{path}: time indices must be 0..T without gaps")
    try:
        states = np.array([[table[(i, t)] for t in times] for i in ids])
    except KeyError as exc:
        raise InvalidInputError(f"{path}: trajectory/time pair {exc.args[0]} missing") from None
    return Dataset(states, float(B))


def save_model(f, path) -> Path:
    if isinstance(f, rkhs.KernelPredictor):
        n = f.n
        meta = {"kind": "kernel", "kernel": json.dumps(f.kernel.to_dict()), "clip_bound": fmt(f.clip_bound)}
        header = ["a"] + [f"p{j}" for j in range(n)] + [f"alpha{j}" for j in range(n)]
        rows = ([a] + [fmt(v) for v in f.anchors[a]] + [fmt(v) for v in f.alphas[a]]
                for a in range(len(f.anchors)))
        return _write(path, meta, header, rows)
    if isinstance(f, nn.MlpPredictor):
        meta = {"kind": "mlp", "n": f.n, "depth": f.depth, "width": f.width,
                "activation": f.activation, "clip_bound": fmt(f.clip_bound)}
        rows = ([d, i, j, fmt(W[i, j])] for d, W in enumerate(f.weights)
                for i in range(W.shape[0]) for j in range(W.shape[1]))
        return _write(path, meta, ["layer", "i", "j", "value"], rows)
    raise InvalidInputError(f"cannot serialize {type(f).__name__}")


def load_model(path):
    meta, header, rows = _read(path)
    kind = meta.get("kind")
    clip_bound = float(meta.get("clip_bound", "inf"))
    if kind == "kernel":
        n = (len(header) - 1) // 2
        arr = np.array([[float(v) for v in row] for row in rows]).reshape(-1, 2 * n + 1)
        kernel = rkhs.Kernel.from_dict(json.loads(meta["kernel"]))
        return rkhs.KernelPredictor(arr[:, 1 + n:], arr[:, 1:1 + n], kernel, clip_bound)
    if kind == "mlp":
        n, D, H = int(meta["n"]), int(meta["depth"]), int(meta["width"])
        Ws = [np.zeros(shape) for shape in nn.layer_shapes(n, D, H)]
        for d, i, j, value in rows:
            Ws[int(d)][int(i), int(j)] = float(value)
        return nn.MlpPredictor(tuple(Ws), meta.get("activation", "relu"), clip_bound)
    raise InvalidInputError(f"{path}: unknown model kind {kind!r}")


def report_rows(report):
    for row in report.rows:
        ok = row.ok
        yield [
            row.k, row.description,
            fmt(row.training_error) if ok else "",
            fmt(row.penalty) if ok else "",
            fmt(row.srm_error) if ok else "",
            fmt(row.epsilon) if ok else "",
            fmt(row.M_used) if ok else "",
            fmt(row.true_error_mean),
            fmt(row.true_error_se),
            int(row.k == report.selected_k),
        ]


def save_report(report, path) -> Path:
    return _write(path, {}, REPORT_COLUMNS, report_rows(report))


def load_report_table(path) -> list[dict]:
    """Rows of a report or curves CSV as dicts with floats (NaN for blanks)."""
    _, header, rows = _read(path)
    out = []
    for row in rows:
        rec = {}
        for key, value in zip(header, row):
            if key == "class_desc":
                rec[key] = value
            elif key in ("k", "selected"):
                rec[key] = int(value)
            else:
                rec[key] = float(value) if value else math.nan
        out.append(rec)
    return out


def save_curves(report, path) -> Path:
    rows = ([r.k, r.description, fmt(r.training_error), fmt(r.srm_error),
             fmt(r.true_error_mean), fmt(r.true_error_se)] for r in report.rows)
    return _write(path, {}, CURVE_COLUMNS, rows)
