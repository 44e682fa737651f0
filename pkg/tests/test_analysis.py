"""Tests for the count-form objective and gradient decomposition."""

from __future__ import annotations

import numpy as np
import pytest

from embmux.analysis import (
    Assignment,
    CountTable,
    build_count_table,
    decompose_gradient,
    mean_pairwise_angle,
    mean_sq_embedding_norm,
    objective_from_counts,
    objective_gradients,
)


def _random_instance(rng, n1=None, n2=None, width=None, regime="unified"):
    n1 = n1 or int(rng.integers(2, 17))
    n2 = n2 or int(rng.integers(2, 17))
    width = width or int(rng.integers(1, 9))
    counts = rng.integers(0, 6, size=(n1, n2, 2))
    table = CountTable(counts)
    if regime == "collisionless":
        assignment = Assignment.collisionless(n1, n2)
    elif regime == "per_feature":
        assignment = Assignment.per_feature(
            n1, n2, int(rng.integers(2, 9)), int(rng.integers(2, 9)), seed=int(rng.integers(1 << 30))
        )
    else:
        assignment = Assignment.unified(n1, n2, int(rng.integers(2, 9)), seed=int(rng.integers(1 << 30)))
    emb = rng.normal(size=(assignment.num_rows, width)) * 0.5
    theta = rng.normal(size=2 * width) * 0.7
    return table, emb, theta, assignment


def _fd_row_gradient(table, emb, theta, assignment, row, h=1e-6):
    grad = np.zeros(emb.shape[1])
    for i in range(emb.shape[1]):
        plus = emb.copy()
        plus[row, i] += h
        minus = emb.copy()
        minus[row, i] -= h
        grad[i] = (
            objective_from_counts(table, plus, theta, assignment)
            - objective_from_counts(table, minus, theta, assignment)
        ) / (2 * h)
    return grad


class TestCountTable:
    def test_single_example(self):
        table = build_count_table(np.array([[0, 0]]), np.array([1]), vocab_sizes=(2, 3))
        assert table.counts[0, 0, 1] == 1
        assert table.counts.sum() == 1
        assert table.num_examples == 1

    def test_duplicates_accumulate(self):
        values = np.array([[1, 2], [1, 2]])
        table = build_count_table(values, np.array([0, 0]))
        assert table.counts[1, 2, 0] == 2

    def test_matches_brute_force_recount(self):
        rng = np.random.default_rng(11)
        values = rng.integers(0, 12, size=(1000, 2))
        labels = rng.integers(0, 2, size=1000)
        table = build_count_table(values, labels, vocab_sizes=(12, 12))
        assert table.num_examples == 1000
        for _ in range(50):
            u, v, y = rng.integers(0, 12), rng.integers(0, 12), rng.integers(0, 2)
            expected = int(((values[:, 0] == u) & (values[:, 1] == v) & (labels == y)).sum())
            assert table.counts[u, v, y] == expected

    def test_rejects_wrong_shapes_and_labels(self):
        with pytest.raises(ValueError):
            build_count_table(np.zeros((3, 3), dtype=int), np.zeros(3, dtype=int))
        with pytest.raises(ValueError):
            build_count_table(np.zeros((3, 2), dtype=int), np.array([0, 2, 1]))
        with pytest.raises(ValueError):
            CountTable(-np.ones((2, 2, 2), dtype=int))


class TestAssignment:
    def test_collisionless_is_injective(self):
        asg = Assignment.collisionless(4, 6)
        all_rows = np.concatenate([asg.addresses_1, asg.addresses_2])
        assert len(np.unique(all_rows)) == 10
        assert asg.num_rows == 10
        assert not asg.indicator(0, 0)

    def test_per_feature_blocks_are_disjoint(self):
        asg = Assignment.per_feature(50, 50, 4, 4, seed=1)
        assert asg.addresses_1.max() < 4
        assert asg.addresses_2.min() >= 4
        for u in range(50):
            for v in range(50):
                assert not asg.indicator(u, v)

    def test_unified_shares_rows(self):
        asg = Assignment.unified(50, 50, 4, seed=1)
        assert any(asg.indicator(u, v) for u in range(50) for v in range(50))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            Assignment(np.array([0, 5]), np.array([1]), 4)


class TestObjective:
    def test_zero_parameters_give_n_log_two(self):
        rng = np.random.default_rng(3)
        values = rng.integers(0, 6, size=(40, 2))
        labels = rng.integers(0, 2, size=40)
        table = build_count_table(values, labels, vocab_sizes=(6, 6))
        asg = Assignment.unified(6, 6, 4, seed=2)
        emb = np.zeros((4, 3))
        theta = np.zeros(6)
        assert objective_from_counts(table, emb, theta, asg) == pytest.approx(40 * np.log(2.0))

    def test_empty_dataset_gives_zero(self):
        table = CountTable(np.zeros((3, 3, 2), dtype=int))
        asg = Assignment.collisionless(3, 3)
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(6, 2))
        assert objective_from_counts(table, emb, rng.normal(size=4), asg) == 0.0

    def test_equals_example_wise_loss(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n1, n2 = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            n = int(rng.integers(1, 60))
            values = rng.integers(0, [n1, n2], size=(n, 2))
            labels = rng.integers(0, 2, size=n)
            table = build_count_table(values, labels, vocab_sizes=(n1, n2))
            regime = ["collisionless", "per_feature", "unified"][int(rng.integers(3))]
            _, emb, theta, asg = _random_instance(rng, n1=n1, n2=n2, regime=regime)
            width = emb.shape[1]
            z = (
                emb[asg.addresses_1[values[:, 0]]] @ theta[:width]
                + emb[asg.addresses_2[values[:, 1]]] @ theta[width:]
            )
            example_wise = float(
                np.sum(np.maximum(z, 0) - z * labels + np.log1p(np.exp(-np.abs(z))))
            )
            grouped = objective_from_counts(table, emb, theta, asg)
            assert grouped == pytest.approx(example_wise, rel=1e-9, abs=1e-9)


class TestDecomposition:
    def test_injective_assignment_has_only_own_part(self):
        rng = np.random.default_rng(5)
        table, emb, theta, asg = _random_instance(rng, regime="collisionless")
        for value in range(asg.vocab_sizes[0]):
            parts = decompose_gradient(table, emb, theta, asg, value)
            np.testing.assert_array_equal(parts.same_feature, 0.0)
            np.testing.assert_array_equal(parts.cross_feature, 0.0)
            fd = _fd_row_gradient(table, emb, theta, asg, asg.addresses_1[value])
            np.testing.assert_allclose(parts.total, fd, rtol=1e-5, atol=1e-7)

    def test_per_feature_hashing_has_no_cross_part(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            table, emb, theta, asg = _random_instance(rng, regime="per_feature")
            for value in range(asg.vocab_sizes[0]):
                parts = decompose_gradient(table, emb, theta, asg, value)
                np.testing.assert_array_equal(parts.cross_feature, 0.0)

    def test_single_forced_cross_collision_is_parallel_to_second_head(self):
        # Rows: value 0 of each feature shares row 0; everything else
        # is private.
        asg = Assignment(np.array([0, 1, 2]), np.array([0, 3, 4]), 5)
        rng = np.random.default_rng(9)
        counts = rng.integers(1, 5, size=(3, 3, 2))
        table = CountTable(counts)
        emb = rng.normal(size=(5, 4))
        theta = rng.normal(size=8)
        parts = decompose_gradient(table, emb, theta, asg, 0)
        theta_2 = theta[4:]
        cos = float(parts.cross_feature @ theta_2) / (
            np.linalg.norm(parts.cross_feature) * np.linalg.norm(theta_2)
        )
        assert abs(abs(cos) - 1.0) <= 1e-12

    def test_cross_part_in_span_of_second_head(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            table, emb, theta, asg = _random_instance(rng, regime="unified")
            width = emb.shape[1]
            theta_2 = theta[width:]
            scale = theta_2 @ theta_2
            for value in range(asg.vocab_sizes[0]):
                parts = decompose_gradient(table, emb, theta, asg, value)
                coeff = float(parts.cross_feature @ theta_2) / scale
                residual = parts.cross_feature - coeff * theta_2
                assert np.linalg.norm(residual) <= 1e-12 * max(1.0, np.linalg.norm(parts.cross_feature))

    @pytest.mark.parametrize("regime", ["collisionless", "per_feature", "unified"])
    def test_parts_sum_to_finite_difference_gradient(self, regime):
        rng = np.random.default_rng(hash(regime) % (1 << 32))
        for _ in range(17):
            table, emb, theta, asg = _random_instance(rng, regime=regime)
            value = int(rng.integers(asg.vocab_sizes[0]))
            parts = decompose_gradient(table, emb, theta, asg, value)
            fd = _fd_row_gradient(table, emb, theta, asg, asg.addresses_1[value])
            denom = max(float(np.linalg.norm(fd)), 1e-8)
            assert float(np.linalg.norm(parts.total - fd)) / denom <= 1e-4

    def test_full_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        table, emb, theta, asg = _random_instance(rng, regime="unified")
        d_emb, d_theta = objective_gradients(table, emb, theta, asg)
        h = 1e-6
        for row in range(emb.shape[0]):
            fd = _fd_row_gradient(table, emb, theta, asg, row)
            np.testing.assert_allclose(d_emb[row], fd, rtol=1e-4, atol=1e-7)
        fd_theta = np.zeros_like(d_theta)
        for i in range(theta.size):
            plus, minus = theta.copy(), theta.copy()
            plus[i] += h
            minus[i] -= h
            fd_theta[i] = (
                objective_from_counts(table, emb, plus, asg)
                - objective_from_counts(table, emb, minus, asg)
            ) / (2 * h)
        np.testing.assert_allclose(d_theta, fd_theta, rtol=1e-4, atol=1e-7)

    def test_value_out_of_range(self):
        rng = np.random.default_rng(1)
        table, emb, theta, asg = _random_instance(rng, regime="unified")
        with pytest.raises(ValueError):
            decompose_gradient(table, emb, theta, asg, asg.vocab_sizes[0])


class TestAngles:
    def test_identical_vectors(self):
        assert mean_pairwise_angle([np.ones(4), np.ones(4)]) == pytest.approx(0.0)

    def test_orthogonal_pair(self):
        assert mean_pairwise_angle([np.array([1.0, 0.0]), np.array([0.0, 2.0])]) == pytest.approx(90.0)

    def test_random_high_dimensional_vectors_near_ninety(self):
        rng = np.random.default_rng(26)
        vectors = [rng.normal(size=39) for _ in range(26)]
        assert mean_pairwise_angle(vectors) == pytest.approx(90.0, abs=10.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            mean_pairwise_angle([np.zeros(3), np.ones(3)])

    def test_single_partition_rejected(self):
        with pytest.raises(ValueError):
            mean_pairwise_angle([np.ones(3)])


class TestNorms:
    def test_unit_rows(self):
        emb = np.eye(4)
        assert mean_sq_embedding_norm(emb, [0, 1, 2, 3]) == pytest.approx(1.0)

    def test_single_row(self):
        emb = np.array([[3.0, 4.0], [9.0, 9.0]])
        assert mean_sq_embedding_norm(emb, [0]) == pytest.approx(25.0)

    def test_empty_used_set_rejected(self):
        with pytest.raises(ValueError):
            mean_sq_embedding_norm(np.ones((2, 2)), [])

    def test_duplicate_rows_count_once(self):
        emb = np.array([[1.0, 0.0], [3.0, 0.0]])
        assert mean_sq_embedding_norm(emb, [0, 0, 1]) == pytest.approx(5.0)


def _synthetic_counts(n1, n2, per_pair, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n1) * scale
    b = rng.normal(size=n2) * scale
    p = 1.0 / (1.0 + np.exp(-(a[:, None] + b[None, :])))
    positives = rng.binomial(per_pair, p)
    return CountTable(np.stack([per_pair - positives, positives], axis=2))


def _descend(table, assignment, width, seed, steps, lr, aligned_heads, zero_embeddings):
    rng = np.random.default_rng(seed + 1000)
    n = table.num_examples
    if zero_embeddings:
        emb = np.zeros((assignment.num_rows, width))
    else:
        emb = rng.uniform(-0.05, 0.05, size=(assignment.num_rows, width))
    if aligned_heads:
        base = rng.normal(size=width)
        base /= np.linalg.norm(base)
        theta = np.concatenate([base, base])
    else:
        theta = rng.normal(size=2 * width) * 0.5
    for _ in range(steps):
        d_emb, d_theta = objective_gradients(table, emb, theta, assignment)
        emb -= lr / n * d_emb
        theta -= lr / n * d_theta
    return emb, theta


class TestTrainingTrends:
    """Collision-pressure effects of shrinking the shared table.

    Both runs use plain gradient descent on the grouped objective.  The
    norm probe stops after a few steps: early accumulated gradients on
    a shared row add one bias term per colliding value, so the squared
    norm scales with the collision load.  Training a dense grid to
    convergence instead reaches the value-merged fixed point, where the
    effect washes out.
    """

    def test_mean_squared_norm_grows_as_table_shrinks(self):
        for seed in range(5):
            table = _synthetic_counts(256, 256, 4, seed)
            norms = []
            for rows in (32, 64, 128, 256):
                asg = Assignment.unified(256, 256, rows, seed=seed)
                emb, _ = _descend(table, asg, 8, seed, 5, 10.0, False, True)
                used = np.union1d(asg.addresses_1, asg.addresses_2)
                norms.append(mean_sq_embedding_norm(emb, used))
            assert all(norms[i] > norms[i + 1] for i in range(3)), (seed, norms)

    def test_aligned_heads_spread_more_under_small_tables(self):
        # Heads start in one shared direction (the worst case).  The
        # smallest table must end wider apart than the largest for a
        # majority of seeds; the middle size is noise-dominated with
        # only one head pair, so no claim is made there.
        wins = 0
        for seed in range(5):
            table = _synthetic_counts(64, 64, 5, seed)
            angles = []
            for rows in (8, 16, 64):
                asg = Assignment.unified(64, 64, rows, seed=seed)
                emb, theta = _descend(table, asg, 8, seed, 400, 20.0, True, False)
                width = emb.shape[1]
                angles.append(mean_pairwise_angle([theta[:width], theta[width:]]))
            wins += angles[0] > angles[-1]
        assert wins >= 3, wins
