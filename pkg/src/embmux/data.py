"""Dataset ingestion, vocabularies, pruning, and splitting.

Ingestion is a streaming two-pass process over delimited text with a
header: the first pass counts token frequencies per categorical
column, the second encodes rows against the frozen vocabularies.
Token ids are assigned by descending frequency with lexicographic
tie-breaks, so re-ingesting the same file reproduces the same ids
bit for bit.  Tokens never seen at vocabulary-build time map to a
dedicated out-of-vocabulary id per feature (one id past the last
real token) rather than being hashed into the vocabulary, which keeps
collisionless baselines well defined.

Recipes adjust parsing:

* ``criteo_like``: labels must already be 0/1; continuous values get
  ``ln(1 + max(v, 0))`` with missing values read as 0.  This is a
  stand-in transform, not a replica of any published pipeline.
* ``avazu_like``: like ``criteo_like``, and a categorical column named
  ``hour`` is reduced modulo 24 before encoding.
* ``movielens_like``: the label column holds a rating, binarized as
  rating >= 3.
* ``raw``: labels must be 0/1; continuous values pass through.
"""

from __future__ import annotations

import csv
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RECIPES = ("criteo_like", "avazu_like", "movielens_like", "raw")

MOVIELENS_DIR_ENV = "EMBMUX_MOVIELENS_DIR"


@dataclass(frozen=True)
class DatasetSpec:
    """Where a delimited dataset lives and how to read it."""

    path: str
    label_column: str
    categorical_columns: tuple[str, ...]
    continuous_columns: tuple[str, ...] = ()
    delimiter: str = ","
    recipe: str = "raw"
    skip_malformed: bool = False

    def __post_init__(self) -> None:
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}, expected one of {RECIPES}")
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))
        object.__setattr__(self, "continuous_columns", tuple(self.continuous_columns))
        if not self.categorical_columns:
            raise ValueError("at least one categorical column is required")
        named = (
            [self.label_column] + list(self.categorical_columns) + list(self.continuous_columns)
        )
        if len(set(named)) != len(named):
            raise ValueError("label, categorical, and continuous columns must be disjoint")
        if len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single character")


@dataclass(frozen=True)
class Vocabulary:
    """Frozen token table for one categorical feature.

    ``entries`` maps token to ``(id, frequency)``.  The ids in use
    form a gap-free range ``[0, size)``; after pruning, several tokens
    may share one id while keeping their own frequencies.  The
    out-of-vocabulary id is ``size``, so encoders produce ids in
    ``[0, size]`` and tables need ``num_ids`` rows.
    """

    entries: dict[str, tuple[int, int]]

    def __post_init__(self) -> None:
        distinct = sorted({i for i, _ in self.entries.values()})
        if distinct != list(range(len(distinct))):
            raise ValueError("token ids must form a gap-free range starting at 0")
        if any(freq < 1 for _, freq in self.entries.values()):
            raise ValueError("frequencies must be at least 1")

    @property
    def size(self) -> int:
        return len({i for i, _ in self.entries.values()})

    @property
    def oov_id(self) -> int:
        return self.size

    @property
    def num_ids(self) -> int:
        return self.size + 1

    @property
    def total_frequency(self) -> int:
        return sum(freq for _, freq in self.entries.values())

    def id_of(self, token: str) -> int:
        entry = self.entries.get(token)
        return self.oov_id if entry is None else entry[0]

    @classmethod
    def from_counts(cls, counts: Counter) -> "Vocabulary":
        ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        return cls({token: (i, freq) for i, (token, freq) in enumerate(ordered)})


@dataclass(frozen=True)
class EncodedDataset:
    """Encoded examples: token ids, binary labels, transformed reals."""

    values: np.ndarray
    labels: np.ndarray
    continuous: np.ndarray
    vocab_sizes: tuple[int, ...]
    skipped_rows: int = field(default=0)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.float64)
        continuous = np.asarray(self.continuous, dtype=np.float64)
        n = values.shape[0]
        if values.ndim != 2:
            raise ValueError("values must be 2-D")
        if labels.shape != (n,):
            raise ValueError("labels must be one per example")
        if continuous.ndim != 2 or continuous.shape[0] != n:
            raise ValueError("continuous block must have one row per example")
        if values.shape[1] != len(self.vocab_sizes):
            raise ValueError("one vocab size per categorical feature is required")
        if n and not np.isin(labels, (0.0, 1.0)).all():
            raise ValueError("labels must be binary")
        for t, size in enumerate(self.vocab_sizes):
            if n and (values[:, t].min() < 0 or values[:, t].max() >= size):
                raise ValueError(f"feature {t} ids exceed vocab size {size}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "continuous", continuous)
        object.__setattr__(self, "vocab_sizes", tuple(int(s) for s in self.vocab_sizes))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def subset(self, indices: np.ndarray) -> "EncodedDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return EncodedDataset(
            self.values[indices],
            self.labels[indices],
            self.continuous[indices],
            self.vocab_sizes,
        )


def binarize_rating(rating: float) -> int:
    """1 exactly when the rating reaches 3."""
    if not math.isfinite(rating):
        raise ValueError(f"rating must be finite, got {rating!r}")
    return 1 if rating >= 3.0 else 0


def transform_continuous(value, recipe: str) -> float:
    """Per-recipe scalar transform; missing values become 0."""
    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe {recipe!r}")
    if value is None:
        return 0.0
    if isinstance(value, str):
        if value.strip() == "":
            return 0.0
        value = float(value)
    value = float(value)
    if math.isnan(value):
        return 0.0
    if recipe in ("criteo_like", "avazu_like"):
        return math.log1p(max(value, 0.0))
    return value


def _preprocess_token(recipe: str, column: str, token: str) -> str:
    if recipe == "avazu_like" and column == "hour":
        try:
            return str(int(token) % 24)
        except ValueError:
            return token
    return token


class _RowReader:
    """Shared row iteration with line numbers and error policy."""

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        self.skipped = 0

    def _fail(self, line: int, message: str) -> bool:
        if self.spec.skip_malformed:
            self.skipped += 1
            return True
        raise ValueError(f"{self.spec.path}: line {line}: {message}")

    def rows(self):
        spec = self.spec
        with open(spec.path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle, delimiter=spec.delimiter)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{spec.path}: empty file, header required") from None
            positions = {name: i for i, name in enumerate(header)}
            needed = (
                [spec.label_column]
                + list(spec.categorical_columns)
                + list(spec.continuous_columns)
            )
            missing = [name for name in needed if name not in positions]
            if missing:
                raise ValueError(f"{spec.path}: header lacks columns {missing}")
            label_pos = positions[spec.label_column]
            cat_pos = [positions[c] for c in spec.categorical_columns]
            cont_pos = [positions[c] for c in spec.continuous_columns]
            for line, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    if self._fail(line, f"expected {len(header)} fields, got {len(row)}"):
                        continue
                try:
                    raw_label = float(row[label_pos])
                except ValueError:
                    if self._fail(line, f"unreadable label {row[label_pos]!r}"):
                        continue
                if spec.recipe == "movielens_like":
                    try:
                        label = float(binarize_rating(raw_label))
                    except ValueError:
                        if self._fail(line, f"non-finite rating {raw_label!r}"):
                            continue
                else:
                    if raw_label not in (0.0, 1.0):
                        if self._fail(line, f"label must be 0 or 1, got {raw_label!r}"):
                            continue
                    label = raw_label
                tokens = [
                    _preprocess_token(spec.recipe, col, row[pos])
                    for col, pos in zip(spec.categorical_columns, cat_pos)
                ]
                try:
                    reals = [transform_continuous(row[pos], spec.recipe) for pos in cont_pos]
                except ValueError:
                    if self._fail(line, "unreadable continuous value"):
                        continue
                yield tokens, label, reals


def build_vocabularies(spec: DatasetSpec) -> list[Vocabulary]:
    """First pass: frequency-ranked token tables per categorical column."""
    counters = [Counter() for _ in spec.categorical_columns]
    reader = _RowReader(spec)
    for tokens, _, _ in reader.rows():
        for counter, token in zip(counters, tokens):
            counter[token] += 1
    return [Vocabulary.from_counts(counter) for counter in counters]


def encode_dataset(spec: DatasetSpec, vocabularies: list[Vocabulary]) -> EncodedDataset:
    """Second pass: encode rows against frozen vocabularies.

    Unseen tokens map to each feature's out-of-vocabulary id; the
    vocabulary does not grow.
    """
    if len(vocabularies) != len(spec.categorical_columns):
        raise ValueError("one vocabulary per categorical column is required")
    values, labels, reals = [], [], []
    reader = _RowReader(spec)
    for tokens, label, row_reals in reader.rows():
        values.append([vocab.id_of(token) for vocab, token in zip(vocabularies, tokens)])
        labels.append(label)
        reals.append(row_reals)
    n = len(values)
    return EncodedDataset(
        np.asarray(values, dtype=np.int64).reshape(n, len(spec.categorical_columns)),
        np.asarray(labels, dtype=np.float64),
        np.asarray(reals, dtype=np.float64).reshape(n, len(spec.continuous_columns)),
        tuple(vocab.num_ids for vocab in vocabularies),
        skipped_rows=reader.skipped,
    )


def ingest(spec: DatasetSpec) -> tuple[EncodedDataset, list[Vocabulary]]:
    """Two-pass ingestion: build vocabularies, then encode."""
    vocabularies = build_vocabularies(spec)
    return encode_dataset(spec, vocabularies), vocabularies


def prune_vocab(vocabulary: Vocabulary, target: int) -> Vocabulary:
    """Shrink to ``target`` ids by merging the least frequent tokens.

    The ``target - 1`` most frequent tokens keep distinct ids (ranked
    by descending frequency, then by original id); every other token
    shares the final id, which carries their combined frequency.
    """
    size = vocabulary.size
    if not 1 <= target <= size:
        raise ValueError(f"target must be in [1, {size}], got {target}")
    if target == size:
        return vocabulary
    ordered = sorted(
        vocabulary.entries.items(), key=lambda item: (-item[1][1], item[1][0])
    )
    entries: dict[str, tuple[int, int]] = {}
    for rank, (token, (_, freq)) in enumerate(ordered):
        entries[token] = (min(rank, target - 1), freq)
    return Vocabulary(entries)


def split_dataset(
    dataset: EncodedDataset, fraction: float = 0.1, seed: int = 0
) -> tuple[EncodedDataset, EncodedDataset]:
    """Shuffled holdout split, deterministic in the seed.

    The holdout gets ``max(1, floor(n * fraction))`` examples and the
    remainder trains; both sides are non-empty.
    """
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least two examples to split")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be strictly between 0 and 1")
    holdout = min(max(1, int(n * fraction)), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[holdout:])), dataset.subset(np.sort(order[:holdout]))


def _zipf_weights(size: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, size + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def synthetic_power_law(
    num_examples: int,
    num_features: int = 8,
    vocab_size: int = 2048,
    exponent: float = 1.1,
    signal_scale: float = 1.0,
    seed: int = 0,
) -> EncodedDataset:
    """Synthetic click data with power-law token popularity.

    Tokens are drawn per feature from a shared Zipf profile and labels
    from a planted additive per-token logit model, so the data carries
    learnable signal with a long tail of rare tokens.
    """
    if num_examples < 1 or num_features < 1 or vocab_size < 2:
        raise ValueError("need at least one example, one feature, and two tokens")
    rng = np.random.default_rng(seed)
    weights = _zipf_weights(vocab_size, exponent)
    values = rng.choice(vocab_size, size=(num_examples, num_features), p=weights)
    token_logits = rng.normal(scale=signal_scale, size=(num_features, vocab_size))
    logits = np.take_along_axis(token_logits.T, values, axis=0).sum(axis=1)
    logits -= logits.mean()
    labels = (rng.random(num_examples) < 1.0 / (1.0 + np.exp(-logits))).astype(np.float64)
    return EncodedDataset(
        values,
        labels,
        np.zeros((num_examples, 0)),
        (vocab_size,) * num_features,
    )


_SYNTHETIC_MOVIELENS_SIZES = {
    "user": 943,
    "movie": 1682,
    "age": 61,
    "gender": 2,
    "occupation": 21,
    "zip": 400,
}


def synthetic_movielens_like(num_examples: int = 100_000, seed: int = 0) -> EncodedDataset:
    """Rating data shaped like the 100k movie-ratings benchmark.

    Six categorical features (user, movie, age, gender, occupation,
    zip) with matching vocabulary scales; ratings come from a planted
    user-movie preference model and are binarized at 3.  The last
    four features are functions of the user, as real demographics
    would be.
    """
    rng = np.random.default_rng(seed)
    sizes = _SYNTHETIC_MOVIELENS_SIZES
    users = rng.choice(sizes["user"], size=num_examples, p=_zipf_weights(sizes["user"], 0.8))
    movies = rng.choice(sizes["movie"], size=num_examples, p=_zipf_weights(sizes["movie"], 1.0))
    profile_rng = np.random.default_rng(seed + 1)
    age_of = profile_rng.integers(0, sizes["age"], size=sizes["user"])
    gender_of = profile_rng.integers(0, sizes["gender"], size=sizes["user"])
    occupation_of = profile_rng.integers(0, sizes["occupation"], size=sizes["user"])
    zip_of = profile_rng.integers(0, sizes["zip"], size=sizes["user"])
    user_bias = profile_rng.normal(scale=0.7, size=sizes["user"])
    movie_bias = profile_rng.normal(scale=0.9, size=sizes["movie"])
    user_taste = profile_rng.normal(size=(sizes["user"], 4))
    movie_taste = profile_rng.normal(size=(sizes["movie"], 4))
    affinity = (
        user_bias[users]
        + movie_bias[movies]
        + (user_taste[users] * movie_taste[movies]).sum(axis=1) / 2.0
    )
    rating = np.clip(np.round(3.1 + affinity + rng.normal(scale=0.6, size=num_examples)), 1, 5)
    values = np.stack(
        [users, movies, age_of[users], gender_of[users], occupation_of[users], zip_of[users]],
        axis=1,
    )
    labels = (rating >= 3.0).astype(np.float64)
    return EncodedDataset(
        values,
        labels,
        np.zeros((num_examples, 0)),
        tuple(sizes.values()),
    )


def load_movielens_100k(
    directory: str | None = None, num_synthetic: int = 100_000, seed: int = 0
) -> EncodedDataset:
    """The 100k ratings benchmark if available, else its synthetic twin.

    Looks for ``u.data`` (tab-separated user, movie, rating,
    timestamp) and ``u.user`` (pipe-separated user, age, gender,
    occupation, zip) under ``directory`` or ``$EMBMUX_MOVIELENS_DIR``.
    Without them, returns `synthetic_movielens_like` data so every
    experiment stays runnable offline.
    """
    root = directory or os.environ.get(MOVIELENS_DIR_ENV)
    if root:
        ratings = Path(root) / "u.data"
        users = Path(root) / "u.user"
        if ratings.is_file() and users.is_file():
            return _load_movielens_files(ratings, users)
        raise ValueError(f"{root} lacks u.data / u.user")
    return synthetic_movielens_like(num_synthetic, seed)


def _load_movielens_files(ratings_path: Path, users_path: Path) -> EncodedDataset:
    profiles: dict[str, tuple[str, str, str, str]] = {}
    with open(users_path, encoding="utf-8") as handle:
        for line_num, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split("|")
            if len(parts) != 5:
                raise ValueError(f"{users_path}: line {line_num}: expected 5 fields")
            profiles[parts[0]] = (parts[1], parts[2], parts[3], parts[4])
    counters = [Counter() for _ in range(6)]
    rows: list[tuple[list[str], int]] = []
    with open(ratings_path, encoding="utf-8") as handle:
        for line_num, line in enumerate(handle, start=1):
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{ratings_path}: line {line_num}: expected 4 fields")
            user, movie, rating = parts[0], parts[1], float(parts[2])
            profile = profiles.get(user)
            if profile is None:
                raise ValueError(f"{ratings_path}: line {line_num}: unknown user {user!r}")
            tokens = [user, movie, profile[0], profile[1], profile[2], profile[3]]
            for counter, token in zip(counters, tokens):
                counter[token] += 1
            rows.append((tokens, binarize_rating(rating)))
    vocabularies = [Vocabulary.from_counts(counter) for counter in counters]
    values = np.array(
        [[vocab.id_of(token) for vocab, token in zip(vocabularies, tokens)] for tokens, _ in rows],
        dtype=np.int64,
    )
    labels = np.array([label for _, label in rows], dtype=np.float64)
    return EncodedDataset(
        values,
        labels,
        np.zeros((len(rows), 0)),
        tuple(vocab.num_ids for vocab in vocabularies),
    )
