"""Count-form objective and exact gradient decomposition.

This module studies a two-feature logistic model whose categorical
values are mapped through an address table into shared embedding rows.
An example ``(u, v)`` scores ``z = <theta_1, E[row(0, u)]> +
<theta_2, E[row(1, v)]>``.  Grouping the training examples by value
pair turns the loss into a count-weighted sum over the vocabulary grid,
and the gradient of any shared row then splits exactly into three
parts: the contribution of the value's own examples, contributions of
same-feature values assigned to the same row, and contributions of
other-feature values assigned to the same row.  The cross-feature part
is a scalar multiple of the other feature's head weights, which is
what lets training mitigate it by reorienting the heads.

Labels follow the standard convention: ``y = 1`` multiplies
``log(sigmoid(z))``.  The three-part structure of the decomposition
does not depend on that choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hashing import bucket_many, derive_feature_seeds

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class CountTable:
    """Per-label co-occurrence counts for two categorical features.

    ``counts[u, v, y]`` is the number of training examples whose first
    feature takes value ``u``, whose second takes value ``v``, and
    whose label is ``y``.
    """

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 3 or counts.shape[2] != 2:
            raise ValueError(f"counts must have shape (n1, n2, 2), got {counts.shape}")
        if counts.shape[0] < 1 or counts.shape[1] < 1:
            raise ValueError("both vocabularies must be non-empty")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def vocab_sizes(self) -> tuple[int, int]:
        return (int(self.counts.shape[0]), int(self.counts.shape[1]))

    @property
    def num_examples(self) -> int:
        return int(self.counts.sum())


def build_count_table(
    values: np.ndarray, labels: np.ndarray, vocab_sizes: tuple[int, int] | None = None
) -> CountTable:
    """Exact co-occurrence counts by label for a two-feature dataset."""
    values = np.asarray(values, dtype=np.int64)
    labels = np.asarray(labels)
    if values.ndim != 2 or values.shape[1] != 2:
        raise ValueError(f"values must have shape (n, 2), got {values.shape}")
    if labels.shape != (values.shape[0],):
        raise ValueError("labels must be one per example")
    y = labels.astype(np.int64)
    if not np.array_equal(y, labels) or not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if vocab_sizes is None:
        if values.shape[0] == 0:
            raise ValueError("vocab_sizes is required for an empty dataset")
        vocab_sizes = (int(values[:, 0].max()) + 1, int(values[:, 1].max()) + 1)
    n1, n2 = int(vocab_sizes[0]), int(vocab_sizes[1])
    if values.size and (
        values.min() < 0 or values[:, 0].max() >= n1 or values[:, 1].max() >= n2
    ):
        raise ValueError("values out of vocabulary range")
    counts = np.zeros((n1, n2, 2), dtype=np.int64)
    np.add.at(counts, (values[:, 0], values[:, 1], y), 1)
    return CountTable(counts)


@dataclass(frozen=True)
class Assignment:
    """Address maps from the two vocabularies into shared rows.

    ``addresses_1[u]`` and ``addresses_2[v]`` give the embedding row
    used by each value; the pairwise indicator tests whether a value
    pair lands on one row.
    """

    addresses_1: np.ndarray
    addresses_2: np.ndarray
    num_rows: int

    def __post_init__(self) -> None:
        a1 = np.asarray(self.addresses_1, dtype=np.int64)
        a2 = np.asarray(self.addresses_2, dtype=np.int64)
        if a1.ndim != 1 or a2.ndim != 1 or a1.size == 0 or a2.size == 0:
            raise ValueError("address maps must be non-empty 1-D arrays")
        if self.num_rows < 1:
            raise ValueError("num_rows must be positive")
        for a in (a1, a2):
            if a.min() < 0 or a.max() >= self.num_rows:
                raise ValueError("addresses out of range")
        object.__setattr__(self, "addresses_1", a1)
        object.__setattr__(self, "addresses_2", a2)

    @property
    def vocab_sizes(self) -> tuple[int, int]:
        return (int(self.addresses_1.size), int(self.addresses_2.size))

    def indicator(self, u: int, v: int) -> bool:
        """True when value ``u`` of feature 0 and value ``v`` of
        feature 1 share an embedding row."""
        return bool(self.addresses_1[u] == self.addresses_2[v])

    @classmethod
    def collisionless(cls, n1: int, n2: int) -> "Assignment":
        """One private row per value; feature 1 rows follow feature 0."""
        return cls(np.arange(n1), n1 + np.arange(n2), n1 + n2)

    @classmethod
    def per_feature(
        cls, n1: int, n2: int, rows_1: int, rows_2: int, seed: int = 0
    ) -> "Assignment":
        """Hash each vocabulary into its own block of rows.

        Same-feature collisions are possible; cross-feature collisions
        are not, because the blocks are disjoint.
        """
        seeds = derive_feature_seeds(seed, 2)
        a1 = bucket_many(seeds.bucket_spec(0, rows_1), np.arange(n1))
        a2 = bucket_many(seeds.bucket_spec(1, rows_2), np.arange(n2))
        return cls(a1, rows_1 + a2, rows_1 + rows_2)

    @classmethod
    def unified(cls, n1: int, n2: int, rows: int, seed: int = 0) -> "Assignment":
        """Hash both vocabularies into one shared block of rows."""
        seeds = derive_feature_seeds(seed, 2)
        a1 = bucket_many(seeds.bucket_spec(0, rows), np.arange(n1))
        a2 = bucket_many(seeds.bucket_spec(1, rows), np.arange(n2))
        return cls(a1, a2, rows)


@dataclass(frozen=True)
class GradientDecomposition:
    """Three-way split of the loss gradient for one embedding row.

    The row is the one assigned to ``value`` of feature 0.  The parts
    sum to the full analytic gradient; the own and same-feature parts
    lie along the first head's weights, the cross-feature part along
    the second's.
    """

    own: np.ndarray
    same_feature: np.ndarray
    cross_feature: np.ndarray
    value: int
    feature: int = field(default=0)

    @property
    def total(self) -> np.ndarray:
        return self.own + self.same_feature + self.cross_feature


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _split_heads(embeddings: np.ndarray, theta: np.ndarray, assignment: Assignment):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ValueError("embeddings must be a 2-D table")
    if embeddings.shape[0] != assignment.num_rows:
        raise ValueError(
            f"table has {embeddings.shape[0]} rows, assignment expects {assignment.num_rows}"
        )
    width = embeddings.shape[1]
    if theta.shape != (2 * width,):
        raise ValueError(f"theta must have length {2 * width}, got {theta.shape}")
    return embeddings, theta[:width], theta[width:]


def _logit_grid(
    embeddings: np.ndarray, theta_1: np.ndarray, theta_2: np.ndarray, assignment: Assignment
) -> np.ndarray:
    a = embeddings[assignment.addresses_1] @ theta_1
    b = embeddings[assignment.addresses_2] @ theta_2
    return a[:, None] + b[None, :]


def _residual_grid(
    table: CountTable, embeddings: np.ndarray, theta: np.ndarray, assignment: Assignment
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pair loss derivative with respect to the logit.

    Returns the residual grid together with the split heads.  Entry
    ``(u, v)`` equals ``(C0 + C1) * sigmoid(z) - C1``.
    """
    embeddings, theta_1, theta_2 = _split_heads(embeddings, theta, assignment)
    if table.vocab_sizes != assignment.vocab_sizes:
        raise ValueError("count table and assignment disagree on vocabulary sizes")
    z = _logit_grid(embeddings, theta_1, theta_2, assignment)
    c0 = table.counts[:, :, 0]
    c1 = table.counts[:, :, 1]
    residual = (c0 + c1) * _sigmoid(z) - c1
    return residual, theta_1, theta_2


def objective_from_counts(
    table: CountTable, embeddings: np.ndarray, theta: np.ndarray, assignment: Assignment
) -> float:
    """Total cross-entropy of the count-weighted dataset.

    Equals the sum of per-example losses of the grouped dataset.
    """
    embeddings, theta_1, theta_2 = _split_heads(embeddings, theta, assignment)
    if table.vocab_sizes != assignment.vocab_sizes:
        raise ValueError("count table and assignment disagree on vocabulary sizes")
    z = _logit_grid(embeddings, theta_1, theta_2, assignment)
    c0 = table.counts[:, :, 0]
    c1 = table.counts[:, :, 1]
    loss = c1 * _softplus(-z) + c0 * _softplus(z)
    return float(loss.sum())


def objective_gradients(
    table: CountTable, embeddings: np.ndarray, theta: np.ndarray, assignment: Assignment
) -> tuple[np.ndarray, np.ndarray]:
    """Full analytic gradient of `objective_from_counts`.

    Returns ``(d_embeddings, d_theta)`` with the same shapes as the
    inputs.
    """
    residual, theta_1, theta_2 = _residual_grid(table, embeddings, theta, assignment)
    per_u = residual.sum(axis=1)
    per_v = residual.sum(axis=0)
    emb = np.asarray(embeddings, dtype=np.float64)
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, assignment.addresses_1, per_u[:, None] * theta_1[None, :])
    np.add.at(d_emb, assignment.addresses_2, per_v[:, None] * theta_2[None, :])
    d_theta_1 = per_u @ emb[assignment.addresses_1]
    d_theta_2 = per_v @ emb[assignment.addresses_2]
    return d_emb, np.concatenate([d_theta_1, d_theta_2])


def decompose_gradient(
    table: CountTable,
    embeddings: np.ndarray,
    theta: np.ndarray,
    assignment: Assignment,
    value: int,
) -> GradientDecomposition:
    """Split the gradient of the row assigned to ``value`` of feature 0.

    The own part collects the value's own examples, the same-feature
    part collects other first-feature values assigned to the same row,
    and the cross-feature part collects second-feature values assigned
    to the same row.  The parts sum to the analytic gradient of
    `objective_from_counts` with respect to that row.
    """
    n1 = assignment.vocab_sizes[0]
    if not 0 <= value < n1:
        raise ValueError(f"value {value} outside first vocabulary of size {n1}")
    residual, theta_1, theta_2 = _residual_grid(table, embeddings, theta, assignment)
    per_u = residual.sum(axis=1)
    per_v = residual.sum(axis=0)
    row = assignment.addresses_1[value]
    same_mask = assignment.addresses_1 == row
    same_mask[value] = False
    cross_mask = assignment.addresses_2 == row
    return GradientDecomposition(
        own=theta_1 * per_u[value],
        same_feature=theta_1 * float(per_u[same_mask].sum()),
        cross_feature=theta_2 * float(per_v[cross_mask].sum()),
        value=int(value),
    )


def mean_pairwise_angle(partitions) -> float:
    """Mean angle in degrees over all unordered pairs of head vectors."""
    vectors = [np.asarray(p, dtype=np.float64).ravel() for p in partitions]
    if len(vectors) < 2:
        raise ValueError("need at least two partitions")
    norms = [float(np.linalg.norm(v)) for v in vectors]
    if min(norms) < _NORM_FLOOR:
        raise ValueError("zero-norm partition has no direction")
    total = 0.0
    pairs = 0
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            if vectors[i].shape != vectors[j].shape:
                raise ValueError("partitions must share a common width")
            cos = float(vectors[i] @ vectors[j]) / (norms[i] * norms[j])
            total += np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
            pairs += 1
    return total / pairs


def mean_sq_embedding_norm(embeddings: np.ndarray, used_rows) -> float:
    """Mean squared l2 norm over the given embedding rows."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ValueError("embeddings must be a 2-D table")
    rows = np.unique(np.asarray(used_rows, dtype=np.int64))
    if rows.size == 0:
        raise ValueError("used row set must be non-empty")
    if rows.min() < 0 or rows.max() >= embeddings.shape[0]:
        raise ValueError("used rows out of range")
    return float((embeddings[rows] ** 2).sum(axis=1).mean())
