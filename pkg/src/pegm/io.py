"""CSV and JSON persistence for data matrices, parameters and results."""

import csv
import json
from pathlib import Path

import numpy as np

__all__ = ["read_data_csv", "write_data_csv", "read_theta_csv", "write_theta_csv",
           "write_json", "to_jsonable"]


def read_data_csv(path):
    """Read an ``n x p`` data matrix; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path} is empty")
    try:
        [float(x) for x in rows[0]]
    except ValueError:
        rows = rows[1:]
    if not rows:
        return np.empty((0, 0))
    return np.array([[float(x) for x in r] for r in rows])


def write_data_csv(path, x):
    x = np.atleast_2d(np.asarray(x))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(x.shape[1])])
        for row in x:
            w.writerow([_fmt(v) for v in row])


def read_theta_csv(path):
    """Read a headerless square parameter matrix."""
    theta = np.loadtxt(path, delimiter=",", ndmin=2)
    if theta.shape[0] != theta.shape[1]:
        raise ValueError(f"theta in {path} is not square: {theta.shape}")
    return theta


def write_theta_csv(path, theta):
    np.savetxt(path, np.atleast_2d(theta), delimiter=",", fmt="%.17g")


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2)
