"""Budgeted embedding tables over a flat parameter store.

One module covers every representation in the benchmark: exact
per-value rows (collisionless), a single hashed row per feature
(hashing trick), multiple hashed rows combined with learned importance
weights (hash embedding), per-dimension flat addressing (hashednet),
contiguous blocks in a flat region (robe_z), elementwise products or
concatenations of sub-table rows (comp_qr, comp_pq), one table shared
by all features (unified), and its variable-width variant
(multisize_unified). Any per-feature kind can also be multiplexed,
which shares its regions across all features while keeping per-feature
hash seeds.

All parameters live in one flat float64 array partitioned into named,
disjoint regions. Lookups return both the embedding vector and a trace
of exactly which flat offsets were read with what combine weights, so
gradient accumulation is an exact adjoint and collision accounting
can work from real addresses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hashing import FeatureSeeds, derive_feature_seeds, derive_seed, hash_raw_np
from .kvconfig import format_kv, parse_bool, parse_kv_text

COLLISIONLESS = "collisionless"
HASHING_TRICK = "hashing_trick"
HASH_EMBEDDING = "hash_embedding"
HASHEDNET = "hashednet"
ROBE_Z = "robe_z"
COMP_QR = "comp_qr"
COMP_PQ = "comp_pq"
UNIFIED = "unified"
MULTISIZE_UNIFIED = "multisize_unified"

KINDS = (
    COLLISIONLESS,
    HASHING_TRICK,
    HASH_EMBEDDING,
    HASHEDNET,
    ROBE_Z,
    COMP_QR,
    COMP_PQ,
    UNIFIED,
    MULTISIZE_UNIFIED,
)

# Kinds whose output is a plain gather: every output coordinate reads
# exactly one parameter with weight 1.
_GATHER_KINDS = (
    COLLISIONLESS,
    HASHING_TRICK,
    HASHEDNET,
    ROBE_Z,
    COMP_PQ,
    UNIFIED,
    MULTISIZE_UNIFIED,
)

# Kinds that support k sub-components.
_K_KINDS = (HASH_EMBEDDING, COMP_QR, COMP_PQ)

_SALT_INIT = 0x20
_SALT_SLOT = 0x21
_SALT_IMPORTANCE = 0x22


@dataclass(frozen=True)
class Region:
    """A named span of the flat store holding rows of a fixed width."""

    name: str
    offset: int
    length: int
    row_width: int

    @property
    def rows(self) -> int:
        return self.length // self.row_width

    @property
    def end(self) -> int:
        return self.offset + self.length

    def contains(self, offsets: np.ndarray) -> bool:
        return bool((offsets >= self.offset).all() and (offsets < self.end).all())


class ParameterStore:
    """Flat float64 parameter array split into disjoint named regions."""

    def __init__(self, values: np.ndarray, regions: list[Region]):
        names = [r.name for r in regions]
        if len(set(names)) != len(names):
            raise ValueError("region names must be unique")
        cursor = 0
        for r in sorted(regions, key=lambda r: r.offset):
            if r.offset < cursor:
                raise ValueError(f"region {r.name} overlaps its predecessor")
            cursor = r.end
        if cursor > values.size:
            raise ValueError("regions extend past the store")
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.regions = {r.name: r for r in regions}

    @classmethod
    def allocate(cls, spec: list[tuple[str, int, int]]) -> ParameterStore:
        """Build a zeroed store from (name, rows, row_width) triples."""
        regions = []
        offset = 0
        for name, rows, width in spec:
            if rows < 1 or width < 1:
                raise ValueError(f"region {name}: rows and width must be >= 1")
            regions.append(Region(name, offset, rows * width, width))
            offset += rows * width
        return cls(np.zeros(offset, dtype=np.float64), regions)

    def region(self, name: str) -> Region:
        return self.regions[name]

    def region_values(self, name: str) -> np.ndarray:
        r = self.regions[name]
        return self.values[r.offset : r.end]

    @property
    def size(self) -> int:
        return int(self.values.size)

    def zeros_like(self) -> np.ndarray:
        """Gradient buffer aligned with the store."""
        return np.zeros_like(self.values)

    def save(self, path: str | Path) -> None:
        """Write the values as little-endian float64 plus a JSON sidecar."""
        path = Path(path)
        path.write_bytes(self.values.astype("<f8").tobytes())
        sidecar = {
            "length": self.size,
            "regions": [
                {
                    "name": r.name,
                    "offset": r.offset,
                    "length": r.length,
                    "row_width": r.row_width,
                }
                for r in self.regions.values()
            ],
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> ParameterStore:
        path = Path(path)
        sidecar = json.loads(Path(str(path) + ".json").read_text())
        values = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
        if values.size != sidecar["length"]:
            raise ValueError(
                f"checkpoint length {values.size} != sidecar length {sidecar['length']}"
            )
        regions = [
            Region(r["name"], r["offset"], r["length"], r["row_width"])
            for r in sidecar["regions"]
        ]
        return cls(values, regions)


@dataclass(frozen=True)
class SchemeConfig:
    """Which representation to build and under what parameter budget.

    `d` is the embedding dimension per feature. `k` is the number of
    lookups (hash_embedding), sub-tables (comp_qr), or chunks
    (comp_pq); `z` is the robe_z block size; `p` is the fraction of
    the budget spent on hash-embedding importance weights. `budget`
    counts trainable reals and is ignored by collisionless.
    """

    kind: str
    d: tuple[int, ...]
    budget: int
    multiplexed: bool = False
    k: int | None = None
    z: int | None = None
    p: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        dims = tuple(int(x) for x in self.d)
        object.__setattr__(self, "d", dims)
        if not dims or any(x < 1 for x in dims):
            raise ValueError(f"d must be positive per feature, got {dims}")
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if self.kind in (UNIFIED, MULTISIZE_UNIFIED):
            # Sharing one table across features is definitional here.
            object.__setattr__(self, "multiplexed", True)
        if self.kind == COLLISIONLESS and self.multiplexed:
            raise ValueError("collisionless tables cannot be multiplexed")
        if self.k is not None and self.kind not in _K_KINDS:
            raise ValueError(f"k is not a hyperparameter of {self.kind}")
        if self.z is not None and self.kind != ROBE_Z:
            raise ValueError(f"z is not a hyperparameter of {self.kind}")
        if self.p is not None and self.kind != HASH_EMBEDDING:
            raise ValueError(f"p is not a hyperparameter of {self.kind}")
        if self.kind in _K_KINDS:
            if self.k is None or self.k < 1:
                raise ValueError(f"{self.kind} requires k >= 1")
        if self.kind == HASH_EMBEDDING:
            if self.p is None or not (0.0 < self.p < 1.0):
                raise ValueError("hash_embedding requires p in (0, 1)")
        if self.kind == ROBE_Z:
            if self.z is None or self.z < 1:
                raise ValueError("robe_z requires z >= 1")
            if any(x % self.z for x in dims):
                raise ValueError(f"z={self.z} must divide every dim in {dims}")
        if self.kind == COMP_PQ and any(x % self.k for x in dims):
            raise ValueError(f"k={self.k} must divide every dim in {dims}")
        if self.kind == MULTISIZE_UNIFIED:
            base = min(dims)
            if any(x % base for x in dims):
                raise ValueError(
                    f"every dim must be a multiple of the base dim {base}, got {dims}"
                )
        if self.kind == UNIFIED and len(set(dims)) != 1:
            raise ValueError("unified requires one shared dim for all features")
        if (
            self.multiplexed
            and self.kind in (HASHING_TRICK, HASH_EMBEDDING, COMP_QR, COMP_PQ)
            and len(set(dims)) != 1
        ):
            raise ValueError(f"multiplexed {self.kind} requires one shared dim")

    @property
    def num_features(self) -> int:
        return len(self.d)

    @property
    def base_dim(self) -> int:
        """Row width of the shared table for multisize_unified."""
        return min(self.d)


def scheme_config_to_text(config: SchemeConfig) -> str:
    """Serialize a config to the `key = value` format."""
    pairs: dict[str, str] = {
        "kind": config.kind,
        "multiplexed": "true" if config.multiplexed else "false",
        "d": ",".join(str(x) for x in config.d),
        "budget": str(config.budget),
    }
    if config.k is not None:
        pairs["k"] = str(config.k)
    if config.z is not None:
        pairs["z"] = str(config.z)
    if config.p is not None:
        pairs["p"] = repr(config.p)
    return format_kv(pairs)


def scheme_config_from_text(text: str) -> SchemeConfig:
    """Parse a config from the `key = value` format."""
    kv = parse_kv_text(text)
    known = {"kind", "multiplexed", "d", "budget", "k", "z", "p"}
    unknown = set(kv) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for required in ("kind", "d", "budget"):
        if required not in kv:
            raise ValueError(f"missing config key {required!r}")
    return SchemeConfig(
        kind=kv["kind"],
        d=tuple(int(x) for x in kv["d"].split(",")),
        budget=int(kv["budget"]),
        multiplexed=parse_bool(kv.get("multiplexed", "false")),
        k=int(kv["k"]) if "k" in kv else None,
        z=int(kv["z"]) if "z" in kv else None,
        p=float(kv["p"]) if "p" in kv else None,
    )


@dataclass(frozen=True)
class TraceEntry:
    """Parameters touched in one region: flat offsets, combine weights,
    and the output coordinate each parameter feeds."""

    region: str
    offsets: np.ndarray
    weights: np.ndarray
    out_index: np.ndarray
    role: str = "linear"


@dataclass(frozen=True)
class LookupTrace:
    """Full account of one (feature, value) lookup."""

    kind: str
    feature: int
    value: int
    dim: int
    entries: tuple[TraceEntry, ...]


@dataclass(frozen=True)
class BatchTrace:
    """Vectorized addressing for a batch of values of one feature.

    `offsets` is (B, d) for gather kinds and (B, k, d) for the
    component kinds (hash_embedding, comp_qr); `importance_offsets`
    is (B, k) for hash_embedding.
    """

    kind: str
    feature: int
    dim: int
    offsets: np.ndarray
    importance_offsets: np.ndarray | None = None


@dataclass(frozen=True)
class FeaturePlan:
    """Precomputed addressing recipe for one feature."""

    feature: int
    dim: int
    regions: tuple[str, ...]
    moduli: tuple[int, ...]
    slot_seeds: np.ndarray
    importance_region: str | None = None
    importance_rows: int = 0
    importance_seed: int = 0


@dataclass
class EmbeddingScheme:
    """A built representation: config, store, seeds, per-feature plans."""

    config: SchemeConfig
    store: ParameterStore
    seeds: FeatureSeeds
    plans: tuple[FeaturePlan, ...]
    vocab_sizes: tuple[int, ...]

    def lookup(self, feature: int, value: int) -> tuple[np.ndarray, LookupTrace]:
        """Embedding vector and exact read trace for one value."""
        vec, btrace = self.lookup_batch(feature, np.array([value], dtype=np.int64))
        return vec[0], _scalar_trace(self, btrace, int(value))

    def lookup_batch(self, feature: int, values: np.ndarray) -> tuple[np.ndarray, BatchTrace]:
        """Embedding matrix (B, d) and addressing for a value batch."""
        if not 0 <= feature < self.config.num_features:
            raise ValueError(f"feature {feature} out of range")
        plan = self.plans[feature]
        values = np.asarray(values, dtype=np.int64)
        kind = self.config.kind
        if kind == HASH_EMBEDDING:
            row_off, imp_off = _he_offsets(self, plan, values)
            w = self.store.values[imp_off]
            emb = np.einsum("bk,bkd->bd", w, self.store.values[row_off])
            return emb, BatchTrace(kind, feature, plan.dim, row_off, imp_off)
        if kind == COMP_QR:
            row_off = _qr_offsets(self, plan, values)
            emb = self.store.values[row_off].prod(axis=1)
            return emb, BatchTrace(kind, feature, plan.dim, row_off)
        off = _gather_offsets(self, plan, values)
        return self.store.values[off], BatchTrace(kind, feature, plan.dim, off)


def _region_starts(scheme: EmbeddingScheme, plan: FeaturePlan) -> list[int]:
    return [scheme.store.region(name).offset for name in plan.regions]


def _gather_offsets(scheme: EmbeddingScheme, plan: FeaturePlan, values: np.ndarray) -> np.ndarray:
    """(B, d) flat offsets for kinds where each output dim reads one param."""
    kind = scheme.config.kind
    b = values.size
    d = plan.dim
    starts = _region_starts(scheme, plan)
    if kind == COLLISIONLESS:
        rows = plan.moduli[0]
        if values.size and (values.min() < 0 or values.max() >= rows):
            raise ValueError(f"value out of range for collisionless table of {rows} rows")
        return starts[0] + values[:, None] * d + np.arange(d, dtype=np.int64)
    if kind in (HASHING_TRICK, UNIFIED):
        row = hash_raw_np(plan.slot_seeds[0], values) % np.uint64(plan.moduli[0])
        return starts[0] + row.astype(np.int64)[:, None] * d + np.arange(d, dtype=np.int64)
    if kind == MULTISIZE_UNIFIED:
        base = scheme.config.base_dim
        rows = hash_raw_np(plan.slot_seeds[None, :], values[:, None]) % np.uint64(plan.moduli[0])
        off = starts[0] + rows.astype(np.int64)[:, :, None] * base + np.arange(base, dtype=np.int64)
        return off.reshape(b, d)
    if kind == HASHEDNET:
        pos = hash_raw_np(plan.slot_seeds[None, :], values[:, None]) % np.uint64(plan.moduli[0])
        return starts[0] + pos.astype(np.int64)
    if kind == ROBE_Z:
        z = scheme.config.z
        length = plan.moduli[0]
        begin = hash_raw_np(plan.slot_seeds[None, :], values[:, None]) % np.uint64(length)
        off = (begin.astype(np.int64)[:, :, None] + np.arange(z, dtype=np.int64)) % length
        return starts[0] + off.reshape(b, d)
    if kind == COMP_PQ:
        k = scheme.config.k
        w = d // k
        parts = []
        for i in range(k):
            row = hash_raw_np(plan.slot_seeds[i], values) % np.uint64(plan.moduli[i])
            parts.append(starts[i] + row.astype(np.int64)[:, None] * w + np.arange(w, dtype=np.int64))
        return np.concatenate(parts, axis=1)
    raise ValueError(f"{kind} has no gather path")


def _component_rows(
    scheme: EmbeddingScheme, plan: FeaturePlan, values: np.ndarray, width: int
) -> np.ndarray:
    """(B, k, width) offsets of one full row per component sub-table."""
    starts = _region_starts(scheme, plan)
    cols = np.arange(width, dtype=np.int64)
    layers = []
    for i, (start, rows) in enumerate(zip(starts, plan.moduli)):
        row = hash_raw_np(plan.slot_seeds[i], values) % np.uint64(rows)
        layers.append(start + row.astype(np.int64)[:, None] * width + cols)
    return np.stack(layers, axis=1)


def _qr_offsets(scheme: EmbeddingScheme, plan: FeaturePlan, values: np.ndarray) -> np.ndarray:
    return _component_rows(scheme, plan, values, plan.dim)


def _he_offsets(
    scheme: EmbeddingScheme, plan: FeaturePlan, values: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    # All k probes address the one embedding region with distinct seeds.
    d = plan.dim
    start = scheme.store.region(plan.regions[0]).offset
    row = hash_raw_np(plan.slot_seeds[None, :], values[:, None]) % np.uint64(plan.moduli[0])
    row_off = start + row.astype(np.int64)[:, :, None] * d + np.arange(d, dtype=np.int64)
    k = scheme.config.k
    imp_start = scheme.store.region(plan.importance_region).offset
    imp_row = hash_raw_np(plan.importance_seed, values) % np.uint64(plan.importance_rows)
    imp_off = imp_start + imp_row.astype(np.int64)[:, None] * k + np.arange(k, dtype=np.int64)
    return row_off, imp_off


def _region_of_offset(scheme: EmbeddingScheme, plan: FeaturePlan, offset: int) -> str:
    for name in plan.regions:
        r = scheme.store.region(name)
        if r.offset <= offset < r.end:
            return name
    raise ValueError(f"offset {offset} outside the feature's regions")


def _scalar_trace(scheme: EmbeddingScheme, btrace: BatchTrace, value: int) -> LookupTrace:
    kind = btrace.kind
    plan = scheme.plans[btrace.feature]
    d = btrace.dim
    entries: list[TraceEntry] = []
    if kind == HASH_EMBEDDING:
        imp = btrace.importance_offsets[0]
        w = scheme.store.values[imp]
        for i in range(scheme.config.k):
            offs = btrace.offsets[0, i].copy()
            entries.append(
                TraceEntry(
                    region=plan.regions[0],
                    offsets=offs,
                    weights=np.full(d, w[i]),
                    out_index=np.arange(d, dtype=np.int64),
                    role="component",
                )
            )
        entries.append(
            TraceEntry(
                region=plan.importance_region,
                offsets=imp.copy(),
                weights=np.ones(imp.size),
                out_index=np.arange(imp.size, dtype=np.int64),
                role="importance",
            )
        )
    elif kind == COMP_QR:
        for i in range(scheme.config.k):
            entries.append(
                TraceEntry(
                    region=plan.regions[i],
                    offsets=btrace.offsets[0, i].copy(),
                    weights=np.ones(d),
                    out_index=np.arange(d, dtype=np.int64),
                    role="component",
                )
            )
    elif kind == COMP_PQ:
        k = scheme.config.k
        w = d // k
        for i in range(k):
            entries.append(
                TraceEntry(
                    region=plan.regions[i],
                    offsets=btrace.offsets[0, i * w : (i + 1) * w].copy(),
                    weights=np.ones(w),
                    out_index=np.arange(i * w, (i + 1) * w, dtype=np.int64),
                )
            )
    else:
        entries.append(
            TraceEntry(
                region=plan.regions[0],
                offsets=btrace.offsets[0].copy(),
                weights=np.ones(d),
                out_index=np.arange(d, dtype=np.int64),
            )
        )
    return LookupTrace(kind, btrace.feature, value, d, tuple(entries))


def param_count(scheme: EmbeddingScheme) -> int:
    """Exact number of trainable reals, importance weights included."""
    return scheme.store.size


def grad_accumulate(
    scheme: EmbeddingScheme,
    trace: LookupTrace,
    upstream: np.ndarray,
    grad: np.ndarray,
) -> None:
    """Add the exact adjoint of one lookup into `grad`.

    For hash_embedding the importance weights receive the inner product
    of the upstream gradient with each looked-up row; for comp_qr the
    product rule distributes the upstream across components.
    """
    if trace.kind != scheme.config.kind:
        raise ValueError(f"trace kind {trace.kind} != scheme kind {scheme.config.kind}")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (trace.dim,):
        raise ValueError(f"upstream must have shape ({trace.dim},)")
    if grad.shape != scheme.store.values.shape:
        raise ValueError("grad buffer does not match the store")
    if trace.kind == COMP_QR:
        rows = [scheme.store.values[e.offsets] for e in trace.entries]
        for i, e in enumerate(trace.entries):
            other = upstream.copy()
            for j, r in enumerate(rows):
                if j != i:
                    other = other * r
            np.add.at(grad, e.offsets, other)
        return
    if trace.kind == HASH_EMBEDDING:
        components = [e for e in trace.entries if e.role == "component"]
        importance = next(e for e in trace.entries if e.role == "importance")
        for i, e in enumerate(components):
            np.add.at(grad, e.offsets, e.weights * upstream[e.out_index])
            row = scheme.store.values[e.offsets]
            grad[importance.offsets[i]] += float(np.dot(upstream, row))
        return
    for e in trace.entries:
        np.add.at(grad, e.offsets, e.weights * upstream[e.out_index])


def grad_accumulate_batch(
    scheme: EmbeddingScheme,
    btrace: BatchTrace,
    upstream: np.ndarray,
    grad: np.ndarray,
) -> None:
    """Batched adjoint: sums the per-example adjoints into `grad`."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if btrace.kind == COMP_QR:
        rows = scheme.store.values[btrace.offsets]
        k = rows.shape[1]
        for i in range(k):
            other = upstream.copy()
            for j in range(k):
                if j != i:
                    other = other * rows[:, j]
            np.add.at(grad, btrace.offsets[:, i], other)
        return
    if btrace.kind == HASH_EMBEDDING:
        rows = scheme.store.values[btrace.offsets]
        w = scheme.store.values[btrace.importance_offsets]
        np.add.at(grad, btrace.offsets, w[:, :, None] * upstream[:, None, :])
        np.add.at(grad, btrace.importance_offsets, np.einsum("bd,bkd->bk", upstream, rows))
        return
    np.add.at(grad, btrace.offsets, upstream)


class BudgetError(ValueError):
    """The parameter budget cannot satisfy the minimum table sizes."""


def _largest_remainder(total: int, weights: list[int]) -> list[int]:
    """Integer shares proportional to weights, summing exactly to total."""
    wsum = sum(weights)
    ideal = [total * w / wsum for w in weights]
    base = [int(x) for x in ideal]
    leftover = total - sum(base)
    fractions = np.array([x - int(x) for x in ideal])
    order = np.argsort(-fractions, kind="stable")
    for i in order[:leftover]:
        base[int(i)] += 1
    return base


def _allocate_shares(budget: int, weights: list[int], minimums: list[int]) -> list[int]:
    """Proportional integer shares with per-feature floors.

    Shares sum exactly to `budget`; any feature below its minimum is
    lifted, funded from the features with the largest surplus.
    """
    if sum(minimums) > budget:
        raise BudgetError(
            f"budget {budget} below the minimum table sizes (need {sum(minimums)})"
        )
    shares = _largest_remainder(budget, weights)
    need = 0
    for t, m in enumerate(minimums):
        if shares[t] < m:
            need += m - shares[t]
            shares[t] = m
    while need > 0:
        donor = max(range(len(shares)), key=lambda t: shares[t] - minimums[t])
        surplus = shares[donor] - minimums[donor]
        take = min(need, surplus)
        shares[donor] -= take
        need -= take
    return shares


def _split_rows_evenly(total_rows: int, k: int) -> list[int]:
    base = total_rows // k
    return [base + (1 if i < total_rows % k else 0) for i in range(k)]


def _carve_hash_embedding(share: int, d: int, k: int, p: float) -> tuple[int, int]:
    """(embedding params, importance params) for one hash-embedding share.

    Targets floor(p * share) importance params, keeps at least one row
    on each side, and pours flooring leftovers back into importance
    rows so at most k - 1 params of the share go unused.
    """
    imp = (int(p * share) // k) * k
    imp = max(imp, k)
    emb = ((share - imp) // d) * d
    if emb < d:
        emb = d
        imp = ((share - emb) // k) * k
    imp += ((share - emb - imp) // k) * k
    if emb < d or imp < k or emb + imp > share:
        raise BudgetError(f"share {share} cannot hold one row of {d} plus {k} weights")
    return emb, imp


def _min_params(kind: str, d: int, k: int | None, z: int | None) -> int:
    if kind == HASH_EMBEDDING:
        return d + k
    if kind == COMP_QR:
        return k * d
    if kind == HASHEDNET:
        return 1
    if kind == ROBE_Z:
        return z
    return d


def _feature_regions(
    kind: str,
    tag: str,
    share: int,
    d: int,
    k: int | None,
    z: int | None,
    p: float | None,
) -> tuple[list[tuple[str, int, int]], str | None]:
    """Region spec (name, rows, width) list for one share; returns the
    importance region name for hash_embedding."""
    if kind in (HASHING_TRICK, UNIFIED):
        rows = share // d
        if rows < 1:
            raise BudgetError(f"share {share} below one row of width {d}")
        return [(tag, rows, d)], None
    if kind == MULTISIZE_UNIFIED:
        rows = share // d
        if rows < 1:
            raise BudgetError(f"share {share} below one row of width {d}")
        return [(tag, rows, d)], None
    if kind == HASHEDNET:
        return [(tag, share, 1)], None
    if kind == ROBE_Z:
        if share < z:
            raise BudgetError(f"share {share} below one block of {z}")
        return [(tag, share, 1)], None
    if kind == HASH_EMBEDDING:
        emb, imp = _carve_hash_embedding(share, d, k, p)
        return [(tag, emb // d, d), (f"{tag}:imp", imp // k, k)], f"{tag}:imp"
    if kind == COMP_QR:
        total_rows = share // d
        if total_rows < k:
            raise BudgetError(f"share {share} below one row per {k} sub-tables")
        return [
            (f"{tag}:c{i}", rows, d)
            for i, rows in enumerate(_split_rows_evenly(total_rows, k))
        ], None
    if kind == COMP_PQ:
        width = d // k
        rows = share // d
        if rows < 1:
            raise BudgetError(f"share {share} below one row bundle of width {d}")
        extra = (share - rows * d) // width
        return [
            (f"{tag}:c{i}", rows + (1 if i < extra else 0), width) for i in range(k)
        ], None
    raise ValueError(f"no region builder for {kind}")


def build_scheme(
    config: SchemeConfig,
    vocab_sizes: list[int],
    seed: int = 0,
    shared_seed: bool = False,
) -> EmbeddingScheme:
    """Construct a scheme over `vocab_sizes` under the config's budget.

    Per-feature kinds split the budget across features proportionally
    to vocabulary size (largest-remainder, at least one row each);
    multiplexed and unified kinds allocate shared regions of the full
    budget; collisionless ignores the budget and sizes tables exactly.
    `seed` drives both the hash seeds and the init draws; with
    `shared_seed` every feature hashes with the same function.
    """
    sizes = [int(n) for n in vocab_sizes]
    t_count = config.num_features
    if len(sizes) != t_count:
        raise ValueError(f"expected {t_count} vocab sizes, got {len(sizes)}")
    if any(n < 1 for n in sizes):
        raise ValueError(f"vocab sizes must be >= 1, got {sizes}")

    kind = config.kind
    spec: list[tuple[str, int, int]] = []
    importance_names: dict[int, str | None] = {}
    feature_regions: dict[int, list[str]] = {}

    if kind == COLLISIONLESS:
        for t, (n, d) in enumerate(zip(sizes, config.d)):
            spec.append((f"f{t}", n, d))
            feature_regions[t] = [f"f{t}"]
            importance_names[t] = None
    elif config.multiplexed:
        d0 = config.base_dim if kind == MULTISIZE_UNIFIED else config.d[0]
        regions, imp = _feature_regions(
            kind, "shared", config.budget, d0, config.k, config.z, config.p
        )
        spec.extend(regions)
        emb_names = [name for name, _, _ in regions if name != imp]
        for t in range(t_count):
            feature_regions[t] = emb_names
            importance_names[t] = imp
    else:
        minimums = [
            _min_params(kind, config.d[t], config.k, config.z) for t in range(t_count)
        ]
        shares = _allocate_shares(config.budget, sizes, minimums)
        for t in range(t_count):
            regions, imp = _feature_regions(
                kind, f"f{t}", shares[t], config.d[t], config.k, config.z, config.p
            )
            spec.extend(regions)
            feature_regions[t] = [name for name, _, _ in regions if name != imp]
            importance_names[t] = imp

    store = ParameterStore.allocate(spec)
    _initialize(store, config, seed)
    seeds = derive_feature_seeds(seed, t_count, shared=shared_seed)
    plans = tuple(
        _make_plan(config, store, seeds, t, feature_regions[t], importance_names[t])
        for t in range(t_count)
    )
    scheme = EmbeddingScheme(config, store, seeds, plans, tuple(sizes))
    if kind != COLLISIONLESS and param_count(scheme) > config.budget:
        raise BudgetError(
            f"built {param_count(scheme)} params over budget {config.budget}"
        )
    return scheme


def _initialize(store: ParameterStore, config: SchemeConfig, seed: int) -> None:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) embedding init; importance rows 1/k.

    Regions draw from one sequential stream in construction order, and
    importance fills consume no randomness, so a multiplexed build and
    its single-feature base build see identical draws.
    """
    rng = np.random.default_rng(derive_seed(seed, 0, _SALT_INIT))
    for region in store.regions.values():
        if region.name.endswith(":imp"):
            store.values[region.offset : region.end] = 1.0 / config.k
            continue
        if region.row_width > 1:
            dim = region.row_width if config.kind != COMP_PQ else max(config.d)
        else:
            dim = max(config.d)
        bound = 1.0 / np.sqrt(dim)
        store.values[region.offset : region.end] = rng.uniform(
            -bound, bound, region.length
        )


def _make_plan(
    config: SchemeConfig,
    store: ParameterStore,
    seeds: FeatureSeeds,
    feature: int,
    region_names: list[str],
    importance_name: str | None,
) -> FeaturePlan:
    kind = config.kind
    d = config.d[feature]
    base_seed = seeds.bucket_seeds[feature]
    moduli = []
    for name in region_names:
        r = store.region(name)
        moduli.append(r.rows if r.row_width > 1 else r.length)
    if kind == COLLISIONLESS:
        slot_seeds = np.zeros(0, dtype=np.uint64)
    elif kind in (HASHING_TRICK, UNIFIED):
        slot_seeds = np.array([base_seed], dtype=np.uint64)
    elif kind == MULTISIZE_UNIFIED:
        slots = d // config.base_dim
        slot_seeds = np.array(
            [derive_seed(base_seed, j, _SALT_SLOT) for j in range(slots)], dtype=np.uint64
        )
    elif kind == HASHEDNET:
        slot_seeds = np.array(
            [derive_seed(base_seed, j, _SALT_SLOT) for j in range(d)], dtype=np.uint64
        )
    elif kind == ROBE_Z:
        blocks = d // config.z
        slot_seeds = np.array(
            [derive_seed(base_seed, j, _SALT_SLOT) for j in range(blocks)], dtype=np.uint64
        )
    else:
        slot_seeds = np.array(
            [derive_seed(base_seed, j, _SALT_SLOT) for j in range(config.k)],
            dtype=np.uint64,
        )
    plan = FeaturePlan(
        feature=feature,
        dim=d,
        regions=tuple(region_names),
        moduli=tuple(moduli),
        slot_seeds=slot_seeds,
        importance_region=importance_name,
        importance_rows=store.region(importance_name).rows if importance_name else 0,
        importance_seed=derive_seed(base_seed, 0, _SALT_IMPORTANCE),
    )
    return plan


@dataclass(frozen=True)
class CollisionCensus:
    """Pair counts of values sharing a first read address."""

    intra: int
    inter: int
    sampled: bool
    sampling_fraction: float


def _first_addresses(scheme: EmbeddingScheme, feature: int, values: np.ndarray) -> np.ndarray:
    """Flat store offset of the first parameter each value reads."""
    out = np.empty(values.size, dtype=np.int64)
    for start in range(0, values.size, 65536):
        chunk = values[start : start + 65536]
        _, btrace = scheme.lookup_batch(feature, chunk)
        if btrace.offsets.ndim == 3:
            out[start : start + chunk.size] = btrace.offsets[:, 0, 0]
        else:
            out[start : start + chunk.size] = btrace.offsets[:, 0]
    return out


def collision_census(
    scheme: EmbeddingScheme,
    vocab_sizes: list[int],
    max_values: int = 200_000,
    seed: int = 0,
) -> CollisionCensus:
    """Count same-address pairs within features and across features.

    Addresses are the first flat parameter each value reads. When the
    total vocabulary exceeds `max_values`, values are subsampled per
    feature and the sampling fraction is reported.
    """
    sizes = [int(n) for n in vocab_sizes]
    total = sum(sizes)
    fraction = min(1.0, max_values / total) if total > max_values else 1.0
    rng = np.random.default_rng(seed)
    addresses = []
    for t, n in enumerate(sizes):
        if fraction < 1.0:
            take = max(1, int(n * fraction))
            values = rng.choice(n, size=take, replace=False).astype(np.int64)
        else:
            values = np.arange(n, dtype=np.int64)
        addresses.append(_first_addresses(scheme, t, values))

    intra = 0
    uniques = []
    for addr in addresses:
        u, c = np.unique(addr, return_counts=True)
        intra += int((c * (c - 1) // 2).sum())
        uniques.append((u, c))
    inter = 0
    for a in range(len(uniques)):
        for b in range(a + 1, len(uniques)):
            ua, ca = uniques[a]
            ub, cb = uniques[b]
            common, ia, ib = np.intersect1d(ua, ub, return_indices=True)
            if common.size:
                inter += int((ca[ia] * cb[ib]).sum())
    return CollisionCensus(
        intra=intra, inter=inter, sampled=fraction < 1.0, sampling_fraction=fraction
    )
