"""Accuracy, binned calibration errors (ECE, AECE, CWCE) and temperature scaling.

Bin conventions:

* ``equal_width``: bin ``m`` (1-based) covers ``((m-1)/M, m/M]``; a confidence
  of exactly 0 goes to the first bin.
* ``equal_count``: samples are stably sorted by confidence and split into ``M``
  contiguous groups whose sizes differ by at most one, larger groups first.

Empty bins report count 0 with accuracy and mean confidence 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import softmax

EQUAL_WIDTH = "equal_width"
EQUAL_COUNT = "equal_count"
SCHEMES = (EQUAL_WIDTH, EQUAL_COUNT)

DEFAULT_ECE_BINS = 15
DEFAULT_RELIABILITY_BINS = 25
DEFAULT_TEMPERATURE_GRID = tuple(round(0.1 * i, 10) for i in range(1, 51))


@dataclass
class PredictionSet:
    probs: np.ndarray  # (N, K), rows on the simplex
    labels: np.ndarray  # (N,)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.probs.ndim != 2 or self.probs.shape[0] < 1:
            raise ValueError("probs must be a non-empty (N, K) matrix")
        if self.labels.shape != (self.probs.shape[0],):
            raise ValueError("labels must have one entry per row of probs")
        k = self.probs.shape[1]
        if self.labels.min() < 0 or self.labels.max() >= k:
            raise ValueError(f"labels must lie in [0, {k})")

    @classmethod
    def from_logits(cls, logits, labels, temperature: float = 1.0) -> "PredictionSet":
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        return cls(softmax(np.asarray(logits, dtype=np.float64) / temperature), labels)

    @property
    def num_samples(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def confidences(self) -> np.ndarray:
        return self.probs.max(axis=1)

    @property
    def correct(self) -> np.ndarray:
        return self.predictions == self.labels


@dataclass
class ReliabilityBins:
    scheme: str
    num_bins: int
    counts: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray
    lower_edges: np.ndarray
    upper_edges: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def calibration_error(self) -> float:
        n = self.total
        if n == 0:
            return 0.0
        gaps = np.abs(self.accuracy - self.mean_confidence)
        return float(np.sum(self.counts / n * gaps))

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "num_bins": self.num_bins,
            "bins": [
                {"lower": float(lo), "upper": float(hi), "count": int(c),
                 "mean_confidence": float(conf), "accuracy": float(acc)}
                for lo, hi, c, conf, acc in zip(self.lower_edges, self.upper_edges, self.counts,
                                                self.mean_confidence, self.accuracy)
            ],
        }


def equal_width_edges(num_bins: int) -> np.ndarray:
    return np.arange(num_bins + 1) / num_bins


def bin_scores(confidences, correct, num_bins: int, scheme: str = EQUAL_WIDTH) -> ReliabilityBins:
    """Group arbitrary (confidence, correctness) pairs into reliability bins."""
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown binning scheme {scheme!r}")
    conf = np.asarray(confidences, dtype=np.float64)
    hit = np.asarray(correct, dtype=np.float64)
    counts = np.zeros(num_bins, dtype=np.int64)
    mean_conf = np.zeros(num_bins)
    acc = np.zeros(num_bins)

    if scheme == EQUAL_WIDTH:
        edges = equal_width_edges(num_bins)
        idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, num_bins - 1)
        groups = [np.flatnonzero(idx == m) for m in range(num_bins)]
        lower, upper = edges[:-1].copy(), edges[1:].copy()
    else:
        order = np.argsort(conf, kind="stable")
        groups = np.array_split(order, num_bins)
        lower, upper = np.zeros(num_bins), np.zeros(num_bins)

    for m, members in enumerate(groups):
        if members.size == 0:
            continue
        counts[m] = members.size
        mean_conf[m] = conf[members].mean()
        acc[m] = hit[members].mean()
        if scheme == EQUAL_COUNT:
            lower[m], upper[m] = conf[members].min(), conf[members].max()
    return ReliabilityBins(scheme, num_bins, counts, mean_conf, acc, lower, upper)


def bin_predictions(preds: PredictionSet, num_bins: int, scheme: str = EQUAL_WIDTH) -> ReliabilityBins:
    return bin_scores(preds.confidences, preds.correct, num_bins, scheme)


def ece(preds: PredictionSet, num_bins: int = DEFAULT_ECE_BINS) -> float:
    return bin_predictions(preds, num_bins, EQUAL_WIDTH).calibration_error()


def aece(preds: PredictionSet, num_bins: int = DEFAULT_ECE_BINS) -> float:
    return bin_predictions(preds, num_bins, EQUAL_COUNT).calibration_error()


def cwce(preds: PredictionSet, num_bins: int = DEFAULT_ECE_BINS) -> float:
    """Macro average over classes of the equal-width binned error of ``s_k`` vs ``1{y = k}``."""
    errors = [
        bin_scores(preds.probs[:, k], preds.labels == k, num_bins, EQUAL_WIDTH).calibration_error()
        for k in range(preds.num_classes)
    ]
    return float(np.mean(errors))


def accuracy(preds: PredictionSet) -> float:
    return float(np.mean(preds.correct))


def temperature_search(logits, labels, grid: Optional[Sequence[float]] = None,
                       num_bins: int = DEFAULT_ECE_BINS) -> tuple[float, float]:
    """Pick the grid temperature with the lowest ECE on ``(logits, labels)``.

    Ties go to the smallest temperature. Returns ``(T, ece_at_T)``.
    """
    grid = DEFAULT_TEMPERATURE_GRID if grid is None else tuple(grid)
    if not grid:
        raise ValueError("temperature grid must not be empty")
    if any(not t > 0 for t in grid):
        raise ValueError("temperatures must be positive")
    best_t, best_ece = None, np.inf
    for t in sorted(grid):
        e = ece(PredictionSet.from_logits(logits, labels, t), num_bins)
        if e < best_ece:
            best_t, best_ece = float(t), e
    return best_t, float(best_ece)
