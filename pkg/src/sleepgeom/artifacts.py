"""On-disk artifacts: feature/embedding CSVs, flat binary matrices, digests."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .tfa import FEATURE_NAMES

__all__ = [
    "sha256_file",
    "write_features_csv",
    "read_features_csv",
    "write_coords_csv",
    "read_coords_csv",
    "write_hypnogram_csv",
    "save_matrix",
    "load_matrix",
]

MAGIC = b"SGMAT1\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v: float) -> str:
    return repr(float(v))


def write_features_csv(path, epochs, stages, U) -> None:
    """``epoch,stage,u0..u9`` with full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "stage", *FEATURE_NAMES])
        for e, s, row in zip(epochs, stages, np.asarray(U)):
            w.writerow([int(e), int(s), *map(_fmt, row)])


def read_features_csv(path):
    """Returns ``(epochs, stages, U)``."""
    epochs, stages, rows = [], [], []
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:2] != ["epoch", "stage"] or len(header) != 2 + len(FEATURE_NAMES):
                raise DataError(f"{path}: unexpected feature header {header}")
            for line in r:
                epochs.append(int(line[0]))
                stages.append(int(line[1]))
                rows.append([float(v) for v in line[2:]])
    except (ValueError, IndexError, StopIteration) as exc:
        raise DataError(f"{path}: malformed feature CSV: {exc}") from None
    return (np.array(epochs, dtype=np.int64), np.array(stages, dtype=np.int64),
            np.array(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES)))


def write_coords_csv(path, epochs, stages, coords) -> None:
    """``epoch_index,stage,coord_1..coord_d``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = np.atleast_2d(np.asarray(coords))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch_index", "stage", *[f"coord_{i + 1}" for i in range(coords.shape[1])]])
        for e, s, row in zip(epochs, stages, coords):
            w.writerow([int(e), int(s), *map(_fmt, row)])


def read_coords_csv(path):
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            data = [line for line in r]
    except (OSError, StopIteration) as exc:
        raise DataError(f"{path}: cannot read coordinates: {exc}") from None
    if header[:2] != ["epoch_index", "stage"]:
        raise DataError(f"{path}: unexpected coordinate header {header}")
    epochs = np.array([int(d[0]) for d in data], dtype=np.int64)
    stages = np.array([int(d[1]) for d in data], dtype=np.int64)
    coords = np.array([[float(v) for v in d[2:]] for d in data]).reshape(len(data), len(header) - 2)
    return epochs, stages, coords


def write_hypnogram_csv(path, epochs, truth, pred) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "truth", "pred"])
        for e, t, p in zip(epochs, truth, pred):
            w.writerow([int(e), int(t), int(p)])


def save_matrix(path, arr, meta: dict | None = None) -> None:
    """Row-major float64 matrix behind a one-line JSON header."""
    a = np.ascontiguousarray(arr, dtype="<f8")
    header = {"shape": list(a.shape), "dtype": "<f8", "order": "C", **(meta or {})}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(a.tobytes())


def load_matrix(path):
    """Returns ``(array, header)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise DataError(f"{path}: not a matrix file")
    end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC) : end])
    body = raw[end + 1 :]
    shape = tuple(header["shape"])
    if len(body) != 8 * int(np.prod(shape)):
        raise DataError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(body, dtype="<f8").reshape(shape).copy(), header
