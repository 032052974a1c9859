"""Labeled datasets and their on-disk directory format.

A dataset directory holds::

    meta.json        {"version": "hierdis-dataset/1", "config": ..., "seed": ...}
    X.bin            uint32 n, uint32 d, then n*d float32, little-endian, row-major
    V.csv            ground-truth factors; inactive cells are empty fields
    A.csv            categorical assignments; undefined entries are -1
    hierarchy.json   ground-truth hierarchy
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..hierarchy import DimensionHierarchy

DATASET_VERSION = "hierdis-dataset/1"


class DatasetFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    X: np.ndarray
    V: np.ndarray  # NaN where inactive
    A: np.ndarray
    hierarchy: DimensionHierarchy
    config: dict = field(default_factory=dict)

    @property
    def active(self) -> np.ndarray:
        return ~np.isnan(self.V)

    @property
    def path_ids(self) -> np.ndarray:
        return self.hierarchy.path_ids(self.A)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.V[idx], self.A[idx], self.hierarchy, dict(self.config))

    def __len__(self):
        return len(self.X)


def write_matrix(path, X: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f4")
    n, d = X.shape
    with open(path, "wb") as f:
        f.write(np.array([n, d], dtype="<u4").tobytes())
        f.write(X.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise DatasetFormatError(f"{path}: truncated header")
        n, d = (int(v) for v in np.frombuffer(header, dtype="<u4"))
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != n * d:
        raise DatasetFormatError(f"{path}: expected {n * d} values, found {data.size}")
    return data.reshape(n, d).astype(np.float32)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_dataset(ds: LabeledDataset, out_dir, extra_meta: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    meta = {"version": DATASET_VERSION, "config": ds.config, "seed": ds.config.get("seed"),
            "n": len(ds), "d": int(ds.X.shape[1])}
    meta.update(extra_meta or {})
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2)
    write_matrix(os.path.join(out_dir, "X.bin"), ds.X)
    V_rows = ([("" if np.isnan(v) else repr(float(v))) for v in row] for row in ds.V)
    _write_csv(os.path.join(out_dir, "V.csv"), ds.hierarchy.continuous_dims, V_rows)
    _write_csv(os.path.join(out_dir, "A.csv"), ds.hierarchy.categorical_names, ds.A.tolist())
    ds.hierarchy.save(os.path.join(out_dir, "hierarchy.json"))


def read_dataset(in_dir) -> LabeledDataset:
    if not os.path.isdir(in_dir):
        raise FileNotFoundError(f"no dataset directory at {in_dir}")
    with open(os.path.join(in_dir, "meta.json")) as f:
        meta = json.load(f)
    if meta.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {meta.get('version')!r}")
    h = DimensionHierarchy.load(os.path.join(in_dir, "hierarchy.json"))
    X = read_matrix(os.path.join(in_dir, "X.bin"))
    with open(os.path.join(in_dir, "V.csv"), newline="") as f:
        r = csv.reader(f)
        header = next(r)
        V = np.array([[np.nan if c == "" else float(c) for c in row] for row in r], dtype=np.float64)
    if header != h.continuous_dims:
        raise DatasetFormatError("V.csv header does not match hierarchy dims")
    with open(os.path.join(in_dir, "A.csv"), newline="") as f:
        r = csv.reader(f)
        header = next(r)
        A = np.array([[int(c) for c in row] for row in r], dtype=np.int64)
    if header != h.categorical_names:
        raise DatasetFormatError("A.csv header does not match hierarchy categoricals")
    V = V.reshape(len(X), len(h.continuous_dims))
    A = A.reshape(len(X), len(h.categorical_names))
    return LabeledDataset(X, V, A, h, meta.get("config", {}))
