"""Seeded synthetic classification data: Gaussian mixtures, long-tailed counts, splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (N, D)
    labels: np.ndarray  # (N,)
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.features.ndim != 2:
            raise DataError("features must be an (N, D) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must have one entry per feature row")
        if self.num_classes < 1:
            raise DataError("num_classes must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass
class SplitDataset:
    train: Dataset
    validation: Dataset
    test: Dataset

    def __post_init__(self):
        parts = (self.train, self.validation, self.test)
        if len({p.num_classes for p in parts}) != 1 or len({p.dim for p in parts}) != 1:
            raise DataError("splits must share the number of classes and the feature dimension")


def class_means(num_classes: int, dim: int, class_separation: float, rng) -> np.ndarray:
    """Class centres at distance ``class_separation`` from the origin.

    When ``dim >= K`` the directions are orthonormal (pairwise distance
    ``sqrt(2) * class_separation``); otherwise they are random unit vectors.
    """
    raw = rng.standard_normal((dim, num_classes))
    if dim >= num_classes:
        q, r = np.linalg.qr(raw)
        # fix the sign ambiguity of QR so the layout depends only on the seed
        q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
        directions = q.T
    else:
        directions = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return class_separation * directions


def gaussian_mixture(num_classes: int, samples_per_class: Sequence[int], dim: int,
                     class_separation: float, noise_sigma: float, seed) -> Dataset:
    """Isotropic Gaussian blobs, one per class, ordered by class."""
    if num_classes < 2:
        raise DataError("a classification mixture needs at least 2 classes")
    counts = np.asarray(samples_per_class, dtype=np.int64)
    if counts.shape != (num_classes,):
        raise DataError("samples_per_class must have one entry per class")
    if np.any(counts < 0) or counts.sum() == 0:
        raise DataError("class counts must be non-negative with at least one positive")
    if dim < 1 or not class_separation > 0 or not noise_sigma > 0:
        raise DataError("dim, class_separation and noise_sigma must be positive")
    rng = np.random.default_rng(seed)
    means = class_means(num_classes, dim, class_separation, rng)
    feats, labels = [], []
    for k, n in enumerate(counts):
        feats.append(means[k] + noise_sigma * rng.standard_normal((n, dim)))
        labels.append(np.full(n, k))
    return Dataset(np.concatenate(feats), np.concatenate(labels), num_classes)


def long_tailed_counts(num_classes: int, max_count: int, imbalance_ratio: float) -> np.ndarray:
    """Exponential profile ``round(max_count * ratio ** (-k / (K - 1)))``, rounding half up."""
    if num_classes < 1 or max_count < 1:
        raise DataError("num_classes and max_count must be positive")
    if imbalance_ratio < 1:
        raise DataError("imbalance_ratio must be >= 1")
    if num_classes == 1:
        return np.array([max_count], dtype=np.int64)
    k = np.arange(num_classes)
    raw = max_count * imbalance_ratio ** (-k / (num_classes - 1))
    return np.floor(raw + 0.5).astype(np.int64)


def _split_sizes(n: int, fractions) -> tuple[int, int, int]:
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), stratified: bool = True,
          seed=0) -> SplitDataset:
    """Random train/validation/test partition; remainders from rounding go to train."""
    f = np.asarray(fractions, dtype=np.float64)
    if f.shape != (3,) or np.any(f < 0) or not np.isclose(f.sum(), 1.0):
        raise DataError("fractions must be three non-negative numbers summing to 1")
    rng = np.random.default_rng(seed)
    if stratified:
        pools = [np.flatnonzero(dataset.labels == k) for k in range(dataset.num_classes)]
    else:
        pools = [np.arange(len(dataset))]
    parts = ([], [], [])
    for pool in pools:
        perm = pool[rng.permutation(pool.size)]
        n_train, n_val, _ = _split_sizes(pool.size, f)
        parts[0].append(perm[:n_train])
        parts[1].append(perm[n_train:n_train + n_val])
        parts[2].append(perm[n_train + n_val:])
    idx = [np.concatenate(p) if p else np.array([], dtype=np.int64) for p in parts]
    for name, frac, members in zip(("train", "validation", "test"), f, idx):
        if frac > 0 and members.size == 0:
            raise DataError(f"{name} split was requested (fraction {frac}) but received no samples")
    return SplitDataset(*(dataset.subset(i) for i in idx))


def balanced_holdout(dataset: Dataset, val_per_class: int, test_per_class: int,
                     seed=0) -> SplitDataset:
    """Carve class-balanced validation and test sets; everything left is train.

    This mirrors long-tailed benchmarks where only the training split is skewed.
    """
    if val_per_class < 0 or test_per_class < 0:
        raise DataError("per-class holdout sizes must be non-negative")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for k in range(dataset.num_classes):
        pool = np.flatnonzero(dataset.labels == k)
        if pool.size < val_per_class + test_per_class:
            raise DataError(f"class {k} has {pool.size} samples, fewer than the "
                            f"{val_per_class + test_per_class} needed for the balanced holdout")
        perm = pool[rng.permutation(pool.size)]
        parts[1].append(perm[:val_per_class])
        parts[2].append(perm[val_per_class:val_per_class + test_per_class])
        parts[0].append(perm[val_per_class + test_per_class:])
    return SplitDataset(*(dataset.subset(np.concatenate(p)) for p in parts))


def long_tailed_mixture(num_classes: int, max_count: int, imbalance_ratio: float, dim: int,
                        class_separation: float, noise_sigma: float, val_per_class: int,
                        test_per_class: int, seed) -> SplitDataset:
    """Long-tailed train split with balanced validation and test splits from the same mixture."""
    train_counts = long_tailed_counts(num_classes, max_count, imbalance_ratio)
    pool = gaussian_mixture(num_classes, train_counts + val_per_class + test_per_class, dim,
                            class_separation, noise_sigma, seed)
    return balanced_holdout(pool, val_per_class, test_per_class, seed=[seed, 1])


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dataset.dim)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path, num_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    dim = len(header) - 1
    if header != [f"f{j}" for j in range(dim)] + ["label"]:
        raise DataError(f"{path}: header must be f0..f{{D-1}},label")
    try:
        feats = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), dim)
        labels = np.array([int(r[-1]) for r in body], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(feats, labels, num_classes)
