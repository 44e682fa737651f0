"""Seeded bucket and sign hash families.

Every address computation in this package flows through two primitives:
a bucket hash mapping a 64-bit token into ``[0, M)`` and a sign hash
mapping it into ``{-1, +1}``. Both are built from a splitmix64-style
multiply–xorshift finalizer with the seed folded in. The construction
is allocation-free, deterministic in ``(seed, token)``, and passes the
pairwise-collision, balance, and uniformity checks in the test suite.

Child seeds (one per feature, per lookup slot, per trial) come from
``derive_seed``, which is injective in the child index for a fixed
parent and salt, so derived families never alias each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFF_FFFF_FFFF_FFFF

# Odd avalanche constants: golden-ratio increment plus the two
# splitmix64 finalizer multipliers.
_GOLDEN = 0x9E37_79B9_7F4A_7C15
_MIX1 = 0xBF58_476D_1CE4_E5B9
_MIX2 = 0x94D0_49BB_1331_11EB

_NP_GOLDEN = np.uint64(_GOLDEN)
_NP_MIX1 = np.uint64(_MIX1)
_NP_MIX2 = np.uint64(_MIX2)

BUCKET = "bucket"
SIGN = "sign"


@dataclass(frozen=True)
class HashSpec:
    """One member of the hash family: a seed, a modulus, and a kind.

    ``kind`` is either ``"bucket"`` (output in ``[0, modulus)``) or
    ``"sign"`` (output in ``{-1, +1}``; the modulus is unused).
    """

    seed: int
    modulus: int
    kind: str = BUCKET

    def __post_init__(self) -> None:
        if self.modulus < 1:
            raise ValueError(f"modulus must be >= 1, got {self.modulus}")
        if self.kind not in (BUCKET, SIGN):
            raise ValueError(f"unknown hash kind {self.kind!r}")


@dataclass(frozen=True)
class FeatureSeeds:
    """Per-feature (bucket seed, sign seed) pairs.

    With ``shared_seed`` every feature uses the same pair, so tokens
    shared between vocabularies land in the same place; otherwise the
    bucket seeds are pairwise distinct by construction.
    """

    bucket_seeds: tuple[int, ...]
    sign_seeds: tuple[int, ...]
    shared_seed: bool

    def __len__(self) -> int:
        return len(self.bucket_seeds)

    def bucket_spec(self, feature: int, modulus: int) -> HashSpec:
        return HashSpec(self.bucket_seeds[feature], modulus, BUCKET)

    def sign_spec(self, feature: int) -> HashSpec:
        return HashSpec(self.sign_seeds[feature], 2, SIGN)


def mix64(z: int) -> int:
    """splitmix64 finalizer; a bijection on 64-bit integers."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the intended modular arithmetic.
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _NP_MIX1
        z = (z ^ (z >> np.uint64(27))) * _NP_MIX2
        return z ^ (z >> np.uint64(31))


def hash_raw(seed: int, token: int) -> int:
    """Full 64-bit hash of (seed, token); bijective in each argument."""
    return mix64(mix64(seed ^ _GOLDEN) + mix64(token ^ _MIX1))


def hash_raw_np(seeds: np.ndarray | int, tokens: np.ndarray | int) -> np.ndarray:
    """Vectorized `hash_raw`; seeds and tokens broadcast against each other."""
    s = np.asarray(seeds, dtype=np.uint64)
    t = np.asarray(tokens).astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix64_np(_mix64_np(s ^ _NP_GOLDEN) + _mix64_np(t ^ _NP_MIX1))


def hash_bucket(spec: HashSpec, token: int) -> int:
    """Bucket index of `token` in ``[0, spec.modulus)``."""
    if spec.kind != BUCKET:
        raise ValueError(f"hash_bucket needs a bucket spec, got kind={spec.kind!r}")
    return hash_raw(spec.seed, token) % spec.modulus


def hash_sign(spec: HashSpec, token: int) -> int:
    """Sign of `token`: -1 or +1, from the low bit of the raw hash."""
    if spec.kind != SIGN:
        raise ValueError(f"hash_sign needs a sign spec, got kind={spec.kind!r}")
    return 1 - 2 * (hash_raw(spec.seed, token) & 1)


def bucket_many(spec: HashSpec, tokens: np.ndarray) -> np.ndarray:
    """Vectorized `hash_bucket`; returns int64 bucket indices."""
    if spec.kind != BUCKET:
        raise ValueError(f"bucket_many needs a bucket spec, got kind={spec.kind!r}")
    raw = hash_raw_np(spec.seed, tokens)
    return (raw % np.uint64(spec.modulus)).astype(np.int64)


def sign_many(spec: HashSpec, tokens: np.ndarray) -> np.ndarray:
    """Vectorized `hash_sign`; returns float64 values in {-1.0, +1.0}."""
    if spec.kind != SIGN:
        raise ValueError(f"sign_many needs a sign spec, got kind={spec.kind!r}")
    raw = hash_raw_np(spec.seed, tokens)
    return 1.0 - 2.0 * (raw & np.uint64(1)).astype(np.float64)


def derive_seed(parent: int, index: int, salt: int = 0) -> int:
    """Child seed for (parent, index, salt).

    Injective in `index` for fixed (parent, salt): the index is spread
    by an odd multiplier (a bijection mod 2^64) before the final mix.
    """
    base = mix64(parent ^ mix64(salt ^ _MIX2))
    return mix64((base + ((index + 1) * _GOLDEN)) & MASK64)


def derive_seeds_np(parent: int, indices: np.ndarray, salt: int = 0) -> np.ndarray:
    """Vectorized `derive_seed` over an array of child indices."""
    base = np.uint64(mix64(parent ^ mix64(salt ^ _MIX2)))
    idx = np.asarray(indices).astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix64_np(base + (idx + np.uint64(1)) * _NP_GOLDEN)


_SALT_FEATURE_BUCKET = 0x01
_SALT_FEATURE_SIGN = 0x02


def derive_feature_seeds(master_seed: int, num_features: int, shared: bool = False) -> FeatureSeeds:
    """Per-feature seed pairs derived from one master seed.

    ``shared=True`` gives every feature the same pair (one hash function
    for all vocabularies); otherwise bucket seeds are pairwise distinct.
    """
    if num_features < 1:
        raise ValueError(f"num_features must be >= 1, got {num_features}")
    if shared:
        b = derive_seed(master_seed, 0, _SALT_FEATURE_BUCKET)
        s = derive_seed(master_seed, 0, _SALT_FEATURE_SIGN)
        return FeatureSeeds((b,) * num_features, (s,) * num_features, True)
    buckets = tuple(derive_seed(master_seed, t, _SALT_FEATURE_BUCKET) for t in range(num_features))
    signs = tuple(derive_seed(master_seed, t, _SALT_FEATURE_SIGN) for t in range(num_features))
    return FeatureSeeds(buckets, signs, False)
