"""Reliability metrics: ECE, NLL, Brier score and accuracy.

Sums go through ``math.fsum`` so results are correctly rounded and do not
depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calib import EPS_LOG
from .errors import DataError

DEFAULT_BINS = 15


@dataclass
class PredictionSet:
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 2 or self.probs.shape[0] < 1:
            raise DataError("prediction set needs an N x K probability matrix with N >= 1")
        if self.labels.shape != (self.probs.shape[0],):
            raise DataError("labels do not match number of predictions")
        if self.labels.min() < 0 or self.labels.max() >= self.probs.shape[1]:
            raise DataError(f"label out of range [0, {self.probs.shape[1]})")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return self.probs.shape[0]

    def validate(self, tol: float = 1e-9) -> None:
        if np.any(self.probs < 0.0) or np.any(self.probs > 1.0):
            raise DataError("probabilities must lie in [0, 1]")
        bad = np.flatnonzero(np.abs(self.probs.sum(axis=1) - 1.0) > tol)
        if bad.size:
            raise DataError(f"row {bad[0]} sums to {self.probs[bad[0]].sum():.9g}, not 1")


@dataclass
class BinReport:
    edges: np.ndarray  # (B + 1,)
    counts: np.ndarray  # (B,) int
    accuracy: np.ndarray  # (B,), 0 for empty bins
    confidence: np.ndarray  # (B,), 0 for empty bins

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.accuracy - self.confidence)


def confidences(preds: PredictionSet) -> np.ndarray:
    return preds.probs.max(axis=1)


def predicted_labels(preds: PredictionSet) -> np.ndarray:
    return np.argmax(preds.probs, axis=1)


def bin_index(conf: np.ndarray, B: int) -> np.ndarray:
    """Equal-width bins on [0, 1]; a value on an edge goes up, 1.0 goes to the last bin."""
    edges = np.arange(B + 1) / B
    idx = np.searchsorted(edges, conf, side="right") - 1
    return np.clip(idx, 0, B - 1)


def ece(preds: PredictionSet, B: int = DEFAULT_BINS) -> tuple[float, BinReport]:
    if B < 1:
        raise DataError("need at least one bin")
    conf = confidences(preds)
    correct = predicted_labels(preds) == preds.labels
    idx = bin_index(conf, B)
    N = len(preds)
    counts = np.zeros(B, dtype=np.int64)
    acc = np.zeros(B)
    avg = np.zeros(B)
    terms = []
    for b in range(B):
        sel = idx == b
        n = int(sel.sum())
        if n == 0:
            continue
        counts[b] = n
        acc[b] = int(correct[sel].sum()) / n
        avg[b] = math.fsum(conf[sel]) / n
        terms.append((n / N) * abs(acc[b] - avg[b]))
    report = BinReport(np.arange(B + 1) / B, counts, acc, avg)
    return math.fsum(terms), report


def nll(preds: PredictionSet) -> float:
    """Summed negative log probability of the true labels (floored at 1e-12)."""
    p = preds.probs[np.arange(len(preds)), preds.labels]
    return math.fsum(-np.log(np.maximum(p, EPS_LOG)))


def nll_mean(preds: PredictionSet) -> float:
    return nll(preds) / len(preds)


def brier(preds: PredictionSet) -> float:
    y = np.zeros_like(preds.probs)
    y[np.arange(len(preds)), preds.labels] = 1.0
    return math.fsum(((preds.probs - y) ** 2).ravel()) / len(preds)


def accuracy(preds: PredictionSet) -> float:
    return int(np.count_nonzero(predicted_labels(preds) == preds.labels)) / len(preds)


def summarize(preds: PredictionSet, B: int = DEFAULT_BINS) -> dict[str, float]:
    return {
        "accuracy": accuracy(preds),
        "ece": ece(preds, B)[0],
        "nll_mean": nll_mean(preds),
        "brier": brier(preds),
    }
