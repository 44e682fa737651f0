"""Tests for AUC, logloss, and RMSE."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embmux.metrics import auc, logloss, rmse


def _brute_force_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestAuc:
    """Rank-statistic AUC against the pair-counting definition."""

    def test_perfect_separation(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_perfect_inversion(self):
        assert auc([0.9, 0.8, 0.1], [0, 0, 1]) == 0.0

    def test_all_ties_give_half(self):
        assert auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [0, 0])

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [0, 2])

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            scores = rng.integers(0, 20, size=200).astype(np.float64) / 20.0
            labels = rng.integers(0, 2, size=200)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert auc(scores, labels) == pytest.approx(
                _brute_force_auc(scores, labels), abs=1e-12
            )

    @given(st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=60)
        labels = rng.integers(0, 2, size=60)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = auc(scores, labels)
        for transform in (lambda s: 3.0 * s + 2.0, np.tanh, lambda s: np.exp(s / 4.0)):
            assert auc(transform(scores), labels) == pytest.approx(base, abs=1e-12)

    @given(st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_negated_scores_complement(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.permutation(np.arange(40, dtype=np.float64))
        labels = rng.integers(0, 2, size=40)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert auc(scores, labels) + auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


class TestLogloss:
    """Clamped mean binary cross-entropy."""

    def test_uninformative_half(self):
        assert logloss([0.5, 0.5], [0, 1]) == pytest.approx(np.log(2.0))

    def test_perfect_predictions_clamp(self):
        assert logloss([0.0, 1.0, 1.0], [0, 1, 1]) <= 1e-6

    def test_known_value(self):
        # -(ln 0.8 + ln 0.6) / 2
        assert logloss([0.8, 0.4], [1, 0]) == pytest.approx(
            -(np.log(0.8) + np.log(0.6)) / 2.0
        )


class TestRmse:
    """Root mean squared error."""

    def test_zero_on_exact(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_constant_offset(self):
        t = np.arange(10, dtype=np.float64)
        assert rmse(t + 0.7, t) == pytest.approx(0.7)
        assert rmse(t - 0.7, t) == pytest.approx(0.7)

    def test_matches_two_pass(self):
        rng = np.random.default_rng(11)
        p = rng.normal(size=100)
        t = rng.normal(size=100)
        naive = np.sqrt(sum((a - b) ** 2 for a, b in zip(p, t)) / 100.0)
        assert rmse(p, t) == pytest.approx(naive, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse([], [])
