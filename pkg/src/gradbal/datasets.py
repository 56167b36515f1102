"""Synthetic dataset generation and a minimal CSV on-disk format.

Datasets are immutable arrays: features X (n, feature_dim), targets y
(int labels for classification, floats for regression), ids implicitly
0..n-1 by row order. The CSV format is `y,x0,x1,...` with full-precision
decimal floats so save/load round-trips exactly; generator provenance
lives in a `<path>.meta.json` sidecar.
"""

from __future__ import annotations

import json
import os
from collections import namedtuple
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataFormatError

Example = namedtuple("Example", ["x", "y", "id"])


@dataclass(frozen=True)
class DatasetMeta:
    n: int
    feature_dim: int
    class_count: int | None  # None marks a regression target
    seed: int | None = None
    normalized: bool = False

    @property
    def regression(self) -> bool:
        return self.class_count is None


class Dataset:
    """Immutable example universe the sorters permute."""

    def __init__(self, X, y, meta: DatasetMeta):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {X.shape}")
        if not np.isfinite(X).all():
            raise ValueError("non-finite features")
        if meta.regression:
            y = np.ascontiguousarray(y, dtype=np.float64)
        else:
            y = np.ascontiguousarray(y, dtype=np.int64)
            if len(y) and (y.min() < 0 or y.max() >= meta.class_count):
                raise ValueError(f"labels must lie in [0, {meta.class_count})")
        if y.shape != (X.shape[0],):
            raise ValueError(f"targets shape {y.shape} does not match {X.shape[0]} rows")
        if meta.n != X.shape[0] or meta.feature_dim != X.shape[1]:
            raise ValueError(f"meta {meta} does not match arrays of shape {X.shape}")
        X.setflags(write=False)
        y.setflags(write=False)
        self.X = X
        self.y = y
        self.meta = meta

    def __len__(self) -> int:
        return self.meta.n

    def example(self, i: int) -> Example:
        return Example(self.X[i], self.y[i], i)

    def batch(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return self.X[ids], self.y[ids]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.meta == other.meta
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


def gen_blobs(n: int, feature_dim: int, class_count: int, separation: float, seed: int) -> Dataset:
    """Balanced Gaussian class clusters with mean pairwise center distance
    approximately `separation` (unit within-class variance per feature)."""
    if class_count < 2:
        raise ConfigError(f"class_count must be >= 2, got {class_count}")
    if n < class_count:
        raise ConfigError(f"need n >= class_count, got n={n}, class_count={class_count}")
    if feature_dim < 1:
        raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")
    if separation < 0:
        raise ConfigError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)
    # E||m_i - m_j||^2 = separation^2 under this scaling
    means = rng.standard_normal((class_count, feature_dim)) * (separation / np.sqrt(2 * feature_dim))
    labels = rng.permutation(np.arange(n) % class_count).astype(np.int64)
    X = means[labels] + rng.standard_normal((n, feature_dim))
    meta = DatasetMeta(n=n, feature_dim=feature_dim, class_count=class_count, seed=seed)
    return Dataset(X, labels, meta)


def gen_linreg(n: int, feature_dim: int, noise_sd: float, seed: int):
    """y = <w*, x> + noise. Returns (dataset, w*) for oracle checks."""
    if n < 1 or feature_dim < 1:
        raise ConfigError(f"need n, feature_dim >= 1, got n={n}, feature_dim={feature_dim}")
    if noise_sd < 0:
        raise ConfigError(f"noise_sd must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    w_true = rng.standard_normal(feature_dim)
    X = rng.standard_normal((n, feature_dim))
    y = X @ w_true + noise_sd * rng.standard_normal(n)
    meta = DatasetMeta(n=n, feature_dim=feature_dim, class_count=None, seed=seed)
    return Dataset(X, y, meta), w_true


def normalize(ds: Dataset) -> Dataset:
    """Per-feature standardization to mean 0, variance 1."""
    mu = ds.X.mean(axis=0)
    sd = ds.X.std(axis=0)
    sd[sd == 0.0] = 1.0
    meta = DatasetMeta(ds.meta.n, ds.meta.feature_dim, ds.meta.class_count, ds.meta.seed, normalized=True)
    return Dataset((ds.X - mu) / sd, ds.y, meta)


def train_test_split(ds: Dataset, train_fraction: float = 5 / 6, seed: int = 0):
    """Seeded shuffle split; both halves get fresh contiguous ids."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(ds) < 2:
        raise ConfigError("cannot split a dataset with fewer than 2 examples")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    n_train = int(round(len(ds) * train_fraction))
    n_train = min(max(n_train, 1), len(ds) - 1)
    parts = []
    for ids in (perm[:n_train], perm[n_train:]):
        meta = DatasetMeta(len(ids), ds.meta.feature_dim, ds.meta.class_count, ds.meta.seed, ds.meta.normalized)
        parts.append(Dataset(ds.X[ids], ds.y[ids], meta))
    return parts[0], parts[1]


def _meta_path(path) -> str:
    return f"{path}.meta.json"


def save_csv(ds: Dataset, path):
    """Header `y,x0,...`; repr floats round-trip float64 exactly."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("y," + ",".join(f"x{j}" for j in range(ds.meta.feature_dim)) + "\n")
        for i in range(len(ds)):
            yval = str(int(ds.y[i])) if not ds.meta.regression else repr(float(ds.y[i]))
            fh.write(yval + "," + ",".join(repr(float(v)) for v in ds.X[i]) + "\n")
    with open(_meta_path(path), "w", encoding="ascii") as fh:
        json.dump(asdict(ds.meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_csv(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: no examples")
    header_no, header = lines[0]
    cols = header.split(",")
    if cols[0] != "y" or cols[1:] != [f"x{j}" for j in range(len(cols) - 1)] or len(cols) < 2:
        raise DataFormatError(f"{path}:{header_no}: bad header {header!r} (expected y,x0,x1,...)")
    feature_dim = len(cols) - 1
    rows = lines[1:]
    if not rows:
        raise DataFormatError(f"{path}: no examples")
    X = np.empty((len(rows), feature_dim))
    y_raw = []
    for r, (lineno, line) in enumerate(rows):
        fields = line.split(",")
        if len(fields) != feature_dim + 1:
            raise DataFormatError(
                f"{path}:{lineno}: expected {feature_dim + 1} fields, got {len(fields)}"
            )
        try:
            y_raw.append(fields[0])
            X[r] = [float(v) for v in fields[1:]]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed number") from None
    meta = None
    if os.path.exists(_meta_path(path)):
        with open(_meta_path(path), "r", encoding="ascii") as fh:
            raw = json.load(fh)
        meta = DatasetMeta(**raw)
        if meta.n != len(rows) or meta.feature_dim != feature_dim:
            raise DataFormatError(f"{path}: sidecar meta {raw} does not match CSV shape")
    if meta is None:
        # no sidecar: integers throughout mean classification
        try:
            labels = [int(v) for v in y_raw]
        except ValueError:
            labels = None
        if labels is not None:
            meta = DatasetMeta(len(rows), feature_dim, class_count=max(labels) + 1)
            return Dataset(X, np.array(labels, dtype=np.int64), meta)
        meta = DatasetMeta(len(rows), feature_dim, class_count=None)
    try:
        if meta.regression:
            y = np.array([float(v) for v in y_raw])
        else:
            y = np.array([int(v) for v in y_raw], dtype=np.int64)
    except ValueError:
        raise DataFormatError(f"{path}: target column does not match meta (regression={meta.regression})") from None
    return Dataset(X, y, meta)
