"""Evaluation metrics: ROC AUC, logloss, RMSE."""

from __future__ import annotations

import numpy as np

LOGLOSS_CLAMP = 1e-7


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores and labels must be parallel vectors, got {s.shape} and {y.shape}")
    return s, y


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties half.

    Computed from midranks in O(n log n).
    """
    s, y = _as_arrays(scores, labels)
    pos = int((y == 1).sum())
    neg = int((y == 0).sum())
    if pos + neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if pos == 0 or neg == 0:
        raise ValueError(f"AUC needs both classes, got {pos} positives and {neg} negatives")
    ranks = _midranks(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def logloss(probabilities, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped at 1e-7."""
    p, y = _as_arrays(probabilities, labels)
    p = np.clip(p, LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def rmse(predictions, targets) -> float:
    """Root mean squared error."""
    p, t = _as_arrays(predictions, targets)
    if p.size == 0:
        raise ValueError("rmse needs at least one point")
    return float(np.sqrt(np.mean((p - t) ** 2)))
