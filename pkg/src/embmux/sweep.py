"""Budget-sweep harness: parameter-accuracy data over scheme variants.

A sweep trains one model per (method, budget multiplier, grid point,
replicate) cell and records the exact trained parameter count next to
the best-epoch evaluation metrics.  Budgets are expressed as
multipliers of the collisionless table's parameter count, so a
multiplier of 0.01 asks every method to make do with 1% of the
uncompressed footprint.

Every finished or failed cell is appended to a JSON-lines journal as
soon as it completes, which makes interrupted sweeps resumable: cells
already journaled are not rerun, and the final results table is
rebuilt from the journal, sorted canonically.  Wall-clock times stay
in the journal and the report; the results table holds only
deterministic fields so the same config and seeds reproduce it byte
for byte.

Methods are scheme kinds, with ``+mux`` requesting the multiplexed
variant (``comp_pq+mux`` shares one parameter pool across features).
Collisionless entries run only at multiplier 1.0: they have nothing
to compress.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import kvconfig
from .analysis import mean_pairwise_angle, mean_sq_embedding_norm
from .data import EncodedDataset, load_movielens_100k, split_dataset, synthetic_power_law
from .hashing import derive_seed
from .nn import ModelSpec, TrainConfig, TrainingDiverged, build_model, train
from .tables import KINDS, BudgetError, SchemeConfig, build_scheme, param_count

_SALT_SCHEME = 0x40
_SALT_MODEL = 0x41
_SALT_TRAIN = 0x42
_SALT_PROBE = 0x43

DEFAULT_MULTIPLIERS = (
    0.001, 0.002, 0.005, 0.007, 0.01, 0.02, 0.05, 0.07,
    0.1, 0.2, 0.5, 0.7, 1.0, 2.0, 5.0, 10.0,
)

DEFAULT_METHODS = (
    "collisionless",
    "hashing_trick",
    "hash_embedding",
    "hashednet",
    "robe_z",
    "comp_qr",
    "comp_pq",
    "unified",
)

DATASETS = ("movielens_100k", "synthetic_power_law")

RESULT_COLUMNS = (
    "method", "multiplexed", "multiplier", "variant", "params",
    "seed", "best_epoch", "auc", "logloss",
)

REPORT_COLUMNS = (
    "method", "multiplexed", "multiplier", "params", "seed",
    "best_epoch", "auc", "logloss", "wall_s",
)


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``text``."""
    value = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        value = ((value ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return value


@dataclass(frozen=True)
class SweepConfig:
    """Everything a sweep needs; mirrors the key-value config file."""

    dataset: str = "movielens_100k"
    dataset_size: int = 100_000
    dataset_seed: int = 0
    eval_fraction: float = 0.1
    methods: tuple[str, ...] = DEFAULT_METHODS
    multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    replicates: int = 5
    epochs: int = 3
    steps: int = 1_000_000_000
    batch: int = 128
    lr: float = 2e-4
    optimizer: str = "adam"
    dim: int = 16
    cross_layers: int = 1
    dense_units: int = 64
    seed: int = 0
    he_k: tuple[int, ...] = (2, 3)
    he_p: tuple[float, ...] = (0.05, 0.1, 0.2)
    robe_lookups: tuple[int, ...] = (2, 4, 8, 16)
    pq_k: tuple[int, ...] = (2, 3, 4, 8, 16)
    qr_k: tuple[int, ...] = (2, 3, 4)

    def __post_init__(self) -> None:
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}, expected one of {DATASETS}")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "multipliers", tuple(float(m) for m in self.multipliers))
        for tup in ("he_k", "he_p", "robe_lookups", "pq_k", "qr_k"):
            object.__setattr__(self, tup, tuple(getattr(self, tup)))
        if not self.methods:
            raise ValueError("at least one method is required")
        for method in self.methods:
            kind = method[:-4] if method.endswith("+mux") else method
            if kind not in KINDS:
                raise ValueError(f"unknown method {method!r}")
            if method.endswith("+mux") and kind == "collisionless":
                raise ValueError("collisionless tables cannot be multiplexed")
        if not self.multipliers or min(self.multipliers) <= 0:
            raise ValueError("multipliers must be positive")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.dim < 1 or self.dataset_size < 10:
            raise ValueError("dim must be positive and dataset_size at least 10")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must be in (0, 1)")


_LIST_FIELDS = {"methods", "multipliers", "he_k", "he_p", "robe_lookups", "pq_k", "qr_k"}
_FLOAT_ITEM_FIELDS = {"multipliers", "he_p"}


def sweep_config_to_text(config: SweepConfig) -> str:
    pairs = {}
    for spec_field in fields(SweepConfig):
        value = getattr(config, spec_field.name)
        if spec_field.name in _LIST_FIELDS:
            pairs[spec_field.name] = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        else:
            pairs[spec_field.name] = repr(value) if isinstance(value, float) else str(value)
    return kvconfig.format_kv(pairs)


def sweep_config_from_text(text: str) -> SweepConfig:
    pairs = kvconfig.parse_kv_text(text)
    known = {f.name: f for f in fields(SweepConfig)}
    kwargs = {}
    for key, raw in pairs.items():
        if key not in known:
            raise ValueError(f"unknown sweep config key {key!r}")
        kwargs[key] = _parse_config_value(key, raw)
    return SweepConfig(**kwargs)


def _parse_config_value(key, raw):
    if key in _LIST_FIELDS:
        items = [piece.strip() for piece in raw.split(",") if piece.strip()]
        if key in _FLOAT_ITEM_FIELDS:
            return tuple(float(piece) for piece in items)
        if key == "methods":
            return tuple(items)
        return tuple(int(piece) for piece in items)
    if key in ("eval_fraction", "lr"):
        return float(raw)
    if key in ("dataset", "optimizer"):
        return raw
    return int(raw)


@dataclass(frozen=True)
class Cell:
    """One schedulable unit of a sweep."""

    method: str
    kind: str
    multiplexed: bool
    multiplier: float
    variant: tuple[tuple[str, float], ...]
    replicate: int

    @property
    def variant_text(self) -> str:
        return ",".join(f"{name}={value:g}" for name, value in self.variant)

    @property
    def key(self) -> str:
        return f"{self.method}|m={self.multiplier!r}|{self.variant_text}|r={self.replicate}"


def _parse_method(method: str) -> tuple[str, bool]:
    if method.endswith("+mux"):
        return method[: -len("+mux")], True
    return method, False


def _grid_for(kind: str, config: SweepConfig) -> list[tuple[tuple[str, float], ...]]:
    if kind == "hash_embedding":
        return [(("k", float(k)), ("p", float(p))) for k in config.he_k for p in config.he_p]
    if kind == "robe_z":
        return [(("lookups", float(l)),) for l in config.robe_lookups]
    if kind == "comp_pq":
        return [(("k", float(k)),) for k in config.pq_k]
    if kind == "comp_qr":
        return [(("k", float(k)),) for k in config.qr_k]
    return [()]


def enumerate_cells(config: SweepConfig) -> list[Cell]:
    """The full deterministic Cartesian product of runs."""
    cells = []
    for method in config.methods:
        kind, multiplexed = _parse_method(method)
        multipliers = (1.0,) if kind == "collisionless" else config.multipliers
        for multiplier in multipliers:
            for variant in _grid_for(kind, config):
                for replicate in range(config.replicates):
                    cells.append(Cell(method, kind, multiplexed, multiplier, variant, replicate))
    return cells


def load_sweep_dataset(config: SweepConfig) -> tuple[EncodedDataset, EncodedDataset]:
    """Train and eval splits for the configured dataset."""
    if config.dataset == "movielens_100k":
        dataset = load_movielens_100k(num_synthetic=config.dataset_size, seed=config.dataset_seed)
    else:
        dataset = synthetic_power_law(config.dataset_size, seed=config.dataset_seed)
    return split_dataset(dataset, fraction=config.eval_fraction, seed=config.dataset_seed)


def collisionless_params(vocab_sizes, dim: int) -> int:
    """Parameter count of the uncompressed per-feature tables."""
    return int(sum(vocab_sizes)) * int(dim)


def _scheme_config(cell: Cell, config: SweepConfig, budget: int, num_features: int) -> SchemeConfig:
    dims = (config.dim,) * num_features
    variant = dict(cell.variant)
    kwargs: dict = {}
    if cell.kind == "hash_embedding":
        kwargs["k"] = int(variant["k"])
        kwargs["p"] = float(variant["p"])
    elif cell.kind == "robe_z":
        lookups = int(variant["lookups"])
        if config.dim % lookups:
            raise ValueError(f"dim {config.dim} not divisible into {lookups} lookups")
        kwargs["z"] = config.dim // lookups
    elif cell.kind in ("comp_pq", "comp_qr"):
        kwargs["k"] = int(variant["k"])
    return SchemeConfig(
        kind=cell.kind, d=dims, budget=budget, multiplexed=cell.multiplexed, **kwargs
    )


def run_cell(cell: Cell, config: SweepConfig, train_split, eval_split) -> dict:
    """Train one cell and return its journal record."""
    started = time.perf_counter()
    record = {
        "key": cell.key,
        "method": cell.method,
        "multiplexed": cell.multiplexed,
        "multiplier": cell.multiplier,
        "variant": cell.variant_text,
        "seed": cell.replicate,
    }
    cell_seed = fnv1a64(f"{config.seed}|{cell.key}")
    try:
        baseline = collisionless_params(train_split.vocab_sizes, config.dim)
        budget = max(1, round(cell.multiplier * baseline))
        scheme_config = _scheme_config(cell, config, budget, len(train_split.vocab_sizes))
        scheme = build_scheme(
            scheme_config, train_split.vocab_sizes, seed=derive_seed(cell_seed, 0, _SALT_SCHEME)
        )
        spec = ModelSpec(
            "dcn_mlp",
            (config.dim,) * len(train_split.vocab_sizes),
            cross_layers=config.cross_layers,
            dense_layers=(config.dense_units,),
        )
        model = build_model(spec, seed=derive_seed(cell_seed, 1, _SALT_MODEL))
        train_config = TrainConfig(
            optimizer=config.optimizer,
            lr=config.lr,
            batch=config.batch,
            steps=config.steps,
            epochs=config.epochs,
            seed=derive_seed(cell_seed, 2, _SALT_TRAIN),
        )
        result = train(
            model,
            scheme,
            (train_split.values, train_split.labels),
            (eval_split.values, eval_split.labels),
            train_config,
        )
    except (ValueError, TrainingDiverged, FloatingPointError) as error:
        record.update(status="failed", error=f"{type(error).__name__}: {error}")
    else:
        record.update(
            status="ok",
            params=param_count(scheme),
            best_epoch=result.best_epoch,
            auc=result.best_auc,
            logloss=result.best_logloss,
        )
    record["wall_s"] = time.perf_counter() - started
    return record


def _read_journal(path: Path) -> dict[str, dict]:
    records: dict[str, dict] = {}
    if path.is_file():
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    record = json.loads(line)
                    records[record["key"]] = record
    return records


def _result_sort_key(record: dict):
    return (
        record["method"],
        record["multiplexed"],
        record["multiplier"],
        record["variant"],
        record["seed"],
    )


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(records: list[dict], path: Path) -> None:
    """Deterministic results table: completed runs, canonical order."""
    completed = sorted(
        (r for r in records if r.get("status") == "ok"), key=_result_sort_key
    )
    lines = [",".join(RESULT_COLUMNS)]
    for record in completed:
        lines.append(",".join(_format_cell(record[c]) for c in RESULT_COLUMNS))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results_csv(path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.split("\n") if line]
    header = lines[0].split(",")
    if tuple(header) != RESULT_COLUMNS:
        raise ValueError(f"unexpected results header {header}")
    rows = []
    for line in lines[1:]:
        raw = dict(zip(header, line.split(",")))
        rows.append(
            {
                "method": raw["method"],
                "multiplexed": raw["multiplexed"] == "true",
                "multiplier": float(raw["multiplier"]),
                "variant": raw["variant"],
                "params": int(raw["params"]),
                "seed": int(raw["seed"]),
                "best_epoch": int(raw["best_epoch"]),
                "auc": float(raw["auc"]),
                "logloss": float(raw["logloss"]),
                "status": "ok",
            }
        )
    return rows


def run_sweep(config: SweepConfig, out_dir, progress=None) -> dict:
    """Execute (or resume) the full sweep under ``out_dir``.

    Returns counts: scheduled, completed, failed, skipped (already in
    the journal from an earlier run).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    journal_path = out / "runlog.jsonl"
    journal = _read_journal(journal_path)
    cells = enumerate_cells(config)
    train_split, eval_split = load_sweep_dataset(config)
    skipped = 0
    with open(journal_path, "a", encoding="utf-8") as handle:
        for cell in cells:
            if cell.key in journal:
                skipped += 1
                continue
            record = run_cell(cell, config, train_split, eval_split)
            journal[cell.key] = record
            handle.write(json.dumps(record, sort_keys=True) + "\n")
            handle.flush()
            if progress is not None:
                progress(record)
    records = [journal[cell.key] for cell in cells if cell.key in journal]
    write_results_csv(records, out / "results.csv")
    completed = sum(1 for r in records if r.get("status") == "ok")
    failed = sum(1 for r in records if r.get("status") == "failed")
    return {
        "scheduled": len(cells),
        "completed": completed,
        "failed": failed,
        "skipped": skipped,
        "results": str(out / "results.csv"),
        "journal": str(journal_path),
    }


def pareto_frontier(rows: list[dict], per_method: bool = False) -> list[dict]:
    """Rows not dominated in (fewer parameters, higher AUC).

    A row is dominated when some other row has no more parameters and
    no less AUC, with a strict improvement in at least one of the two.
    With ``per_method``, dominance is judged within each method only.
    """
    if not rows:
        return []

    def frontier(group: list[dict]) -> list[dict]:
        order = sorted(range(len(group)), key=lambda i: (group[i]["params"], -group[i]["auc"]))
        kept = []
        best_auc = -math.inf
        best_params = None
        for i in order:
            row = group[i]
            if row["auc"] > best_auc or (row["auc"] == best_auc and row["params"] == best_params):
                kept.append(i)
                if row["auc"] > best_auc:
                    best_auc = row["auc"]
                    best_params = row["params"]
        kept_set = set(kept)
        return [row for i, row in enumerate(group) if i in kept_set]

    if not per_method:
        return frontier(rows)
    out = []
    for method in sorted({row["method"] for row in rows}):
        out.extend(frontier([row for row in rows if row["method"] == method]))
    return out


@dataclass(frozen=True)
class ProbeRow:
    """One probe measurement: head geometry and table load."""

    table_size: int
    seed: int
    mean_angle_deg: float
    mean_sq_norm: float


def probe_experiment(
    dataset: EncodedDataset,
    table_sizes,
    seeds,
    width: int = 8,
    epochs: int = 1,
    batch: int = 256,
    lr: float = 0.01,
    optimizer: str = "adam",
    steps: int = 1_000_000_000,
    eval_fraction: float = 0.1,
) -> list[ProbeRow]:
    """Head-angle and embedding-norm measurements across table sizes.

    Trains the single-layer model on one shared table per size, with
    every head partition initialized in the same direction (the worst
    case for cross-feature interference), then records the mean
    pairwise angle between trained head partitions and the mean
    squared norm over table rows the training data touches.
    """
    num_features = dataset.values.shape[1]
    if num_features < 2:
        raise ValueError("probe needs at least two categorical features")
    train_split, eval_split = split_dataset(dataset, fraction=eval_fraction, seed=0)
    rows: list[ProbeRow] = []
    for table_size in table_sizes:
        for seed in seeds:
            config = SchemeConfig(
                kind="unified", d=(width,) * num_features, budget=int(table_size) * width
            )
            scheme = build_scheme(
                config, train_split.vocab_sizes, seed=derive_seed(seed, 0, _SALT_PROBE)
            )
            spec = ModelSpec("logistic", (width,) * num_features)
            model = build_model(spec, seed=derive_seed(seed, 1, _SALT_PROBE))
            rng = np.random.default_rng(derive_seed(seed, 2, _SALT_PROBE))
            direction = rng.normal(size=width)
            direction /= np.linalg.norm(direction)
            scale = 1.0 / math.sqrt(spec.input_width)
            model.theta[:] = np.tile(direction * scale, num_features)
            result = train(
                model,
                scheme,
                (train_split.values, train_split.labels),
                (eval_split.values, eval_split.labels),
                TrainConfig(
                    optimizer=optimizer,
                    lr=lr,
                    batch=batch,
                    steps=steps,
                    epochs=epochs,
                    seed=derive_seed(seed, 3, _SALT_PROBE),
                ),
            )
            partitions = [result.theta[a:b] for a, b in spec.theta_partitions()]
            touched = _touched_rows(scheme, train_split.values, width)
            table = result.store_values.reshape(-1, width)
            rows.append(
                ProbeRow(
                    table_size=int(table_size),
                    seed=int(seed),
                    mean_angle_deg=mean_pairwise_angle(partitions),
                    mean_sq_norm=mean_sq_embedding_norm(table, touched),
                )
            )
    return rows


def _touched_rows(scheme, values: np.ndarray, width: int) -> np.ndarray:
    rows = []
    for feature in range(values.shape[1]):
        uniques = np.unique(values[:, feature])
        _, trace = scheme.lookup_batch(feature, uniques)
        rows.append(trace.offsets[:, 0] // width)
    return np.unique(np.concatenate(rows))


def probe_rows_to_csv(rows: list[ProbeRow]) -> str:
    lines = ["table_size,seed,mean_angle_deg,mean_sq_norm"]
    for row in rows:
        lines.append(
            f"{row.table_size},{row.seed},{row.mean_angle_deg!r},{row.mean_sq_norm!r}"
        )
    return "\n".join(lines) + "\n"


def _report_method(record: dict) -> str:
    variant = record.get("variant", "")
    return f"{record['method']}[{variant}]" if variant else record["method"]


def emit_report(records: list[dict], csv_path, json_path) -> None:
    """Report CSV (with wall times) plus per-cell mean/SD summary."""
    completed = sorted(
        (r for r in records if r.get("status") == "ok"), key=_result_sort_key
    )
    lines = [",".join(REPORT_COLUMNS)]
    for record in completed:
        row = dict(record, method=_report_method(record))
        lines.append(",".join(_format_cell(row.get(c, "")) for c in REPORT_COLUMNS))
    Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    groups: dict[tuple, list[dict]] = {}
    for record in completed:
        key = (_report_method(record), record["multiplexed"], record["multiplier"])
        groups.setdefault(key, []).append(record)
    cells = []
    for (method, multiplexed, multiplier), group in sorted(groups.items()):
        aucs = np.array([r["auc"] for r in group])
        loglosses = np.array([r["logloss"] for r in group])
        cells.append(
            {
                "method": method,
                "multiplexed": multiplexed,
                "multiplier": multiplier,
                "params": group[0]["params"],
                "replicates": len(group),
                "auc_mean": float(aucs.mean()),
                "auc_sd": float(aucs.std(ddof=1)) if len(group) > 1 else 0.0,
                "logloss_mean": float(loglosses.mean()),
                "logloss_sd": float(loglosses.std(ddof=1)) if len(group) > 1 else 0.0,
            }
        )
    Path(json_path).write_text(
        json.dumps({"cells": cells}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
