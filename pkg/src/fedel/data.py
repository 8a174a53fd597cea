"""Datasets and non-iid partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ConfigurationError


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


def _split(x, y, test_fraction, rng, num_classes):
    order = rng.permutation(len(y))
    n_test = int(round(len(y) * test_fraction))
    test, train = order[:n_test], order[n_test:]
    return Dataset(x[train], y[train], x[test], y[test], num_classes)


def gaussian_mixture(
    n_samples: int = 6000,
    num_classes: int = 10,
    input_dim: int = 16,
    clusters_per_class: int = 3,
    separation: float = 2.0,
    noise: float = 1.0,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """Each class is a mixture of ``clusters_per_class`` isotropic Gaussians
    with centers drawn from ``N(0, separation^2 I)``."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation, size=(num_classes, clusters_per_class, input_dim))
    y = np.arange(n_samples) % num_classes
    rng.shuffle(y)
    which = rng.integers(0, clusters_per_class, size=n_samples)
    x = centers[y, which] + rng.normal(0.0, noise, size=(n_samples, input_dim))
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    return _split(x, y.astype(np.int64), test_fraction, rng, num_classes)


def load_csv(path, test_fraction: float = 0.2, seed: int = 0, has_header: bool | None = None) -> Dataset:
    """Numeric CSV, one sample per row, integer class label in the last column."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if has_header is None:
        try:
            [float(v) for v in rows[0]]
            has_header = False
        except ValueError:
            has_header = True
    rows = rows[1:] if has_header else rows
    arr = np.array([[float(v) for v in r] for r in rows if r], dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ConfigurationError(f"{path}: need at least one feature column and a label column")
    x, labels = arr[:, :-1], arr[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ConfigurationError(f"{path}: labels must be integers")
    _, y = np.unique(labels.astype(np.int64), return_inverse=True)
    rng = np.random.default_rng(seed)
    return _split(x, y.astype(np.int64), test_fraction, rng, int(y.max()) + 1)


def dirichlet_partition(labels, num_clients: int, alpha: float, seed: int = 0, max_tries: int = 100) -> list[list[int]]:
    """Split sample indices across clients with per-class shares ~ Dirichlet(alpha).

    Every client receives at least one sample: empty draws are retried and, if
    that keeps failing, repaired by moving one sample from the largest client.
    """
    labels = np.asarray(labels)
    if alpha <= 0:
        raise ConfigurationError("dirichlet alpha must be positive")
    if num_clients < 1:
        raise ConfigurationError("need at least one client")
    if num_clients > len(labels):
        raise ConfigurationError(f"cannot give {num_clients} clients a sample each from {len(labels)} samples")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)

    for _ in range(max_tries):
        parts = _draw(labels, classes, num_clients, alpha, rng)
        if all(parts):
            break
    else:
        for i in range(num_clients):
            if not parts[i]:
                donor = max(range(num_clients), key=lambda j: len(parts[j]))
                parts[i].append(parts[donor].pop())
    return [sorted(p) for p in parts]


def _draw(labels, classes, num_clients, alpha, rng):
    parts = [[] for _ in range(num_clients)]
    for c in classes:
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        shares = rng.dirichlet(np.full(num_clients, alpha))
        cuts = (np.cumsum(shares)[:-1] * len(idx)).astype(int)
        for client, chunk in enumerate(np.split(idx, cuts)):
            parts[client].extend(int(i) for i in chunk)
    return parts
