"""Signed feature-hashing sketch and estimator moments.

A bag of tokens is sketched to a length-M vector by adding a random
sign at a hashed coordinate per token. The inner product of two
sketches is an unbiased estimator of the inner product of the
underlying indicator vectors. This module provides the encoder, the
closed-form mean/variance of that estimator for a single table and
for two features handled either by one shared table over the
concatenated vocabulary ("unified") or by separate per-feature tables
("hashed"), the exact variance gap between the two schemes, and a
Monte-Carlo oracle over freshly seeded hash draws.

All arithmetic is double precision. The Monte-Carlo path streams
trials in chunks and merges central moments with Pebay's parallel
update (the batched form of Welford's algorithm), so it reports
stable variances and standard errors at millions of trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hashing import SIGN, HashSpec, derive_seeds_np, hash_raw_np


@dataclass(frozen=True)
class BagVector:
    """Binary indicator vector over a vocabulary of size N.

    Multiple ones are allowed (a multivalent bag). `entries` is stored
    as an int8 array and validated to contain only 0 and 1.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.entries)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("entries must be a non-empty 1-d vector")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("entries must be binary (0/1)")
        object.__setattr__(self, "entries", arr.astype(np.int8))

    @classmethod
    def from_tokens(cls, size: int, tokens: list[int] | np.ndarray) -> BagVector:
        entries = np.zeros(size, dtype=np.int8)
        entries[np.asarray(tokens, dtype=np.int64)] = 1
        return cls(entries)

    @classmethod
    def one_hot(cls, size: int, index: int) -> BagVector:
        return cls.from_tokens(size, [index])

    @property
    def size(self) -> int:
        return int(self.entries.size)

    @property
    def tokens(self) -> np.ndarray:
        """Indices of the nonzero entries."""
        return np.nonzero(self.entries)[0]

    def weight(self) -> int:
        """Number of ones."""
        return int(self.entries.sum())

    def dot(self, other: BagVector) -> int:
        if self.size != other.size:
            raise ValueError(f"vocabulary mismatch: {self.size} vs {other.size}")
        return int(np.dot(self.entries.astype(np.int64), other.entries.astype(np.int64)))


@dataclass(frozen=True)
class MomentPair:
    """Mean and variance of the inner-product estimator."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")


@dataclass(frozen=True)
class SchemeMoments:
    """Closed-form moments for the unified and per-feature schemes."""

    unified: MomentPair
    hashed: MomentPair


@dataclass(frozen=True)
class MonteCarloMoments:
    """Empirical moments over independently seeded hash draws.

    `*_se` holds (standard error of the mean, standard error of the
    variance). `degenerate` is set when trials < 2, where the sample
    variance is reported as 0 and carries no information.
    """

    unified: MomentPair
    hashed: MomentPair
    trials: int
    degenerate: bool
    unified_se: tuple[float, float] = field(default=(0.0, 0.0))
    hashed_se: tuple[float, float] = field(default=(0.0, 0.0))


def encode(tokens: list[int] | np.ndarray, bucket: HashSpec, sign: HashSpec) -> np.ndarray:
    """Sketch a token bag: coordinate m sums the signs of tokens hashed to m."""
    if sign.kind != SIGN:
        raise ValueError("second spec must be a sign hash")
    out = np.zeros(bucket.modulus, dtype=np.float64)
    toks = np.asarray(tokens, dtype=np.uint64)
    if toks.size == 0:
        return out
    braw = hash_raw_np(bucket.seed, toks)
    sraw = hash_raw_np(sign.seed, toks)
    idx = (braw % np.uint64(bucket.modulus)).astype(np.int64)
    sgn = 1.0 - 2.0 * (sraw & np.uint64(1)).astype(np.float64)
    np.add.at(out, idx, sgn)
    return out


def single_table_moments(x: BagVector, y: BagVector, modulus: int) -> MomentPair:
    """Exact estimator moments for one shared table of size `modulus`.

    mean = <x, y>; variance = (<x,x><y,y> + <x,y>^2 - 2<x*y, x*y>) / M
    where * is the elementwise product.
    """
    if modulus < 1:
        raise ValueError(f"modulus must be >= 1, got {modulus}")
    if x.size != y.size:
        raise ValueError(f"vocabulary mismatch: {x.size} vs {y.size}")
    xx = float(x.dot(x))
    yy = float(y.dot(y))
    xy = float(x.dot(y))
    had = BagVector(x.entries * y.entries) if (x.entries * y.entries).any() else None
    hh = float(had.dot(had)) if had is not None else 0.0
    return MomentPair(mean=xy, variance=(xx * yy + xy * xy - 2.0 * hh) / modulus)


def concat_scheme_moments(
    x1: BagVector,
    x2: BagVector,
    y1: BagVector,
    y2: BagVector,
    m1: int,
    m2: int,
) -> SchemeMoments:
    """Moments for two features under one shared table versus two tables.

    Unified sketches the concatenated vectors into m1 + m2 buckets;
    hashed sketches each feature into its own table and adds the two
    estimates, so its variance is the sum of the per-feature variances.
    Both schemes are unbiased for <x1,y1> + <x2,y2>.
    """
    if m1 < 1 or m2 < 1:
        raise ValueError(f"moduli must be >= 1, got {m1}, {m2}")
    u_x = BagVector(np.concatenate([x1.entries, x2.entries]))
    u_y = BagVector(np.concatenate([y1.entries, y2.entries]))
    unified = single_table_moments(u_x, u_y, m1 + m2)
    p1 = single_table_moments(x1, y1, m1)
    p2 = single_table_moments(x2, y2, m2)
    hashed = MomentPair(mean=p1.mean + p2.mean, variance=p1.variance + p2.variance)
    return SchemeMoments(unified=unified, hashed=hashed)


def variance_gap(k1: float, k2: float, m1: int, m2: int) -> float:
    """Excess variance of per-feature tables over one shared table.

    For orthogonal inputs with k1 and k2 active tokens per feature the
    hashed-minus-unified variance difference reduces to the exact
    rational form (k1*m2 - k2*m1)^2 / (m1*m2*(m1+m2)), which is
    non-negative and zero exactly when the loads k/m balance.
    """
    if m1 < 1 or m2 < 1:
        raise ValueError(f"moduli must be >= 1, got {m1}, {m2}")
    if k1 < 0 or k2 < 0:
        raise ValueError(f"counts must be >= 0, got {k1}, {k2}")
    num = (k1 * m2 - k2 * m1) ** 2
    return num / (m1 * m2 * (m1 + m2))


class _RunningMoments:
    """Streaming central moments over chunks of samples.

    Chunks are reduced to (n, mean, M2, M3, M4) and merged with
    Pebay's parallel-update formulas, the batched generalization of
    Welford's algorithm. M4 is kept so the standard error of the
    sample variance is available.
    """

    __slots__ = ("n", "mean", "m2", "m3", "m4")

    def __init__(self) -> None:
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.m3 = 0.0
        self.m4 = 0.0

    def update(self, values: np.ndarray) -> None:
        nb = int(values.size)
        if nb == 0:
            return
        mb = float(values.mean())
        d = values - mb
        d2 = d * d
        m2b = float(d2.sum())
        m3b = float((d2 * d).sum())
        m4b = float((d2 * d2).sum())
        na, ma = self.n, self.mean
        n = na + nb
        delta = mb - ma
        self.mean = ma + delta * nb / n
        m2a, m3a, m4a = self.m2, self.m3, self.m4
        self.m2 = m2a + m2b + delta**2 * na * nb / n
        self.m3 = (
            m3a
            + m3b
            + delta**3 * na * nb * (na - nb) / n**2
            + 3.0 * delta * (na * m2b - nb * m2a) / n
        )
        self.m4 = (
            m4a
            + m4b
            + delta**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
            + 6.0 * delta**2 * (na * na * m2b + nb * nb * m2a) / n**2
            + 4.0 * delta * (na * m3b - nb * m3a) / n
        )
        self.n = n

    def variance(self) -> float:
        if self.n < 2:
            return 0.0
        return max(self.m2 / (self.n - 1), 0.0)

    def se_mean(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.sqrt(self.variance() / self.n))

    def se_variance(self) -> float:
        # Var(s^2) = (m4 - (n-3)/(n-1) * s^4) / n with m4 the central
        # fourth sample moment.
        if self.n < 2:
            return 0.0
        n = self.n
        s2 = self.variance()
        m4 = self.m4 / n
        var_s2 = (m4 - (n - 3) / (n - 1) * s2 * s2) / n
        return float(np.sqrt(max(var_s2, 0.0)))


def _pair_estimates(
    bucket_seeds: np.ndarray,
    sign_seeds: np.ndarray,
    x_tokens: np.ndarray,
    y_tokens: np.ndarray,
    modulus: int,
) -> np.ndarray:
    """<sketch(x), sketch(y)> for each seed pair, without materializing sketches.

    The inner product of two signed sketches equals the signed count of
    cross pairs that collide: sum over (w in x, v in y) of
    [h(w) == h(v)] * sign(w) * sign(v).
    """
    trials = bucket_seeds.size
    if x_tokens.size == 0 or y_tokens.size == 0:
        return np.zeros(trials, dtype=np.float64)
    all_tokens = np.concatenate([x_tokens, y_tokens]).astype(np.uint64)
    braw = hash_raw_np(bucket_seeds[:, None], all_tokens[None, :])
    sraw = hash_raw_np(sign_seeds[:, None], all_tokens[None, :])
    buckets = braw % np.uint64(modulus)
    signs = 1.0 - 2.0 * (sraw & np.uint64(1)).astype(np.float64)
    nx = x_tokens.size
    bx, by = buckets[:, :nx], buckets[:, nx:]
    sx, sy = signs[:, :nx], signs[:, nx:]
    eq = bx[:, :, None] == by[:, None, :]
    prod = sx[:, :, None] * sy[:, None, :]
    return np.sum(eq * prod, axis=(1, 2))


_SALT_U_BUCKET = 0x10
_SALT_U_SIGN = 0x11
_SALT_F1_BUCKET = 0x12
_SALT_F1_SIGN = 0x13
_SALT_F2_BUCKET = 0x14
_SALT_F2_SIGN = 0x15


def monte_carlo_moments(
    x1: BagVector,
    x2: BagVector,
    y1: BagVector,
    y2: BagVector,
    m1: int,
    m2: int,
    trials: int,
    seed: int = 0x5EED,
    chunk: int = 1 << 14,
) -> MonteCarloMoments:
    """Empirical estimator moments over `trials` independent hash draws.

    Each trial derives fresh bucket/sign seeds from `seed`, sketches
    the concatenated vectors into one table of m1 + m2 buckets
    (unified) and each feature into its own table (hashed), and
    records both inner-product estimates. Returns sample means and
    variances with standard errors.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if m1 < 1 or m2 < 1:
        raise ValueError(f"moduli must be >= 1, got {m1}, {m2}")
    n1 = x1.size
    ux = np.concatenate([x1.tokens, x2.tokens + n1]).astype(np.uint64)
    uy = np.concatenate([y1.tokens, y2.tokens + n1]).astype(np.uint64)
    x1t, y1t = x1.tokens.astype(np.uint64), y1.tokens.astype(np.uint64)
    x2t, y2t = x2.tokens.astype(np.uint64), y2.tokens.astype(np.uint64)

    acc_u = _RunningMoments()
    acc_h = _RunningMoments()
    for start in range(0, trials, chunk):
        idx = np.arange(start, min(start + chunk, trials))
        ub = derive_seeds_np(seed, idx, _SALT_U_BUCKET)
        us = derive_seeds_np(seed, idx, _SALT_U_SIGN)
        f1b = derive_seeds_np(seed, idx, _SALT_F1_BUCKET)
        f1s = derive_seeds_np(seed, idx, _SALT_F1_SIGN)
        f2b = derive_seeds_np(seed, idx, _SALT_F2_BUCKET)
        f2s = derive_seeds_np(seed, idx, _SALT_F2_SIGN)
        acc_u.update(_pair_estimates(ub, us, ux, uy, m1 + m2))
        est_h = _pair_estimates(f1b, f1s, x1t, y1t, m1) + _pair_estimates(
            f2b, f2s, x2t, y2t, m2
        )
        acc_h.update(est_h)

    degenerate = trials < 2
    return MonteCarloMoments(
        unified=MomentPair(acc_u.mean, acc_u.variance()),
        hashed=MomentPair(acc_h.mean, acc_h.variance()),
        trials=trials,
        degenerate=degenerate,
        unified_se=(acc_u.se_mean(), acc_u.se_variance()),
        hashed_se=(acc_h.se_mean(), acc_h.se_variance()),
    )
