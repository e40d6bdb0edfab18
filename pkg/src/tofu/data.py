"""Desk-scale datasets and IID client partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["Dataset", "DatasetError", "iid_partition", "make_dataset", "one_hot", "read_digits_csv"]


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise DatasetError("train and test splits overlap")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels outside [0, {self.num_classes})")

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def x_train(self) -> np.ndarray:
        return self.inputs[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.labels[self.train_idx]

    @property
    def x_test(self) -> np.ndarray:
        return self.inputs[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.labels[self.test_idx]


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _split(n: int, test_fraction: float, rng) -> tuple:
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _blobs(n, dim, classes, cluster_std, center_scale, rng):
    centers = rng.uniform(-center_scale, center_scale, size=(classes, dim))
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    x = centers[labels] + cluster_std * rng.standard_normal((n, dim))
    return x, labels


def _moons(n, noise, rng):
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0, np.pi, n_out)
    t_in = np.linspace(0, np.pi, n_in)
    x = np.vstack([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        np.column_stack([1 - np.cos(t_in), 1 - np.sin(t_in) - 0.5]),
    ])
    labels = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    x = x + noise * rng.standard_normal(x.shape)
    perm = rng.permutation(n)
    return x[perm], labels[perm]


def read_digits_csv(path, input_dim: int | None = None) -> tuple:
    """Rows of ``input_dim`` pixel values in [0, 1] followed by an integer label."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if input_dim is None:
                input_dim = len(row) - 1
            if len(row) != input_dim + 1:
                raise DatasetError(f"{path}:{lineno}: expected {input_dim + 1} fields, got {len(row)}")
            try:
                pix = [float(c) for c in row[:-1]]
                lab = int(row[-1])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric field") from None
            if any(not 0.0 <= p <= 1.0 for p in pix):
                raise DatasetError(f"{path}:{lineno}: pixel values must lie in [0, 1]")
            rows.append(pix)
            labels.append(lab)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return np.array(rows), np.array(labels, dtype=np.int64)


def make_dataset(kind: str, seed: int = 0, n_samples: int = 1000, n_features: int = 2,
                 n_classes: int = 3, cluster_std: float = 1.0, center_scale: float = 3.0,
                 noise: float = 0.1, test_fraction: float = 0.2, csv_path=None) -> Dataset:
    """Build one of ``blobs``, ``moons`` or ``digits_csv`` with a seeded train/test split."""
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        x, y = _blobs(n_samples, n_features, n_classes, cluster_std, center_scale, rng)
        classes = n_classes
    elif kind == "moons":
        x, y = _moons(n_samples, noise, rng)
        classes = 2
    elif kind == "digits_csv":
        if csv_path is None:
            raise DatasetError("digits_csv needs csv_path")
        x, y = read_digits_csv(csv_path, None)
        classes = max(int(y.max()) + 1, n_classes)
    else:
        raise DatasetError(f"unknown dataset kind {kind!r}")
    if not 0.0 <= test_fraction < 1.0:
        raise DatasetError("test_fraction must lie in [0, 1)")
    train, test = _split(len(y), test_fraction, rng)
    return Dataset(x, y, classes, train, test)


def iid_partition(labels, num_clients: int, rng) -> list:
    """Disjoint, class-stratified shards whose sizes differ by at most one.

    ``labels`` are the labels of the items being split; returned shards hold
    positions into that array.
    """
    labels = np.asarray(labels)
    if num_clients < 1:
        raise ValueError("need at least one client")
    if labels.size < num_clients:
        raise ValueError(f"{labels.size} items cannot fill {num_clients} shards")
    perm = rng.permutation(labels.size)
    order = perm[np.argsort(labels[perm], kind="stable")]
    return [np.sort(order[i::num_clients]) for i in range(num_clients)]
