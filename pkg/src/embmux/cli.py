"""Command-line harness: sweeps, frontier extraction, probes, checks.

Subcommands:

* ``sweep``: run or resume a budget sweep; writes ``results.csv``
  (deterministic), ``runlog.jsonl`` (journal with wall times),
  ``report.csv``, and ``summary.json`` under ``--out``.
* ``pareto``: extract the non-dominated rows from a results table.
* ``probe``: head-angle and embedding-norm measurements across table
  sizes on a built-in dataset.
* ``sketch-check``: compares Monte-Carlo estimator moments against
  the closed forms and prints a pass/fail table.
* ``gradcheck``: compares analytic gradients against finite
  differences for every scheme kind and both heads.

Exit status is 0 on success and nonzero when a check fails or a sweep
produces no completed runs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import sweep as sweep_mod
from .data import load_movielens_100k, synthetic_power_law
from .nn import ModelSpec, build_model, full_gradient_check
from .sketch import BagVector, concat_scheme_moments, monte_carlo_moments
from .sweep import (
    SweepConfig,
    emit_report,
    pareto_frontier,
    probe_experiment,
    probe_rows_to_csv,
    read_results_csv,
    run_sweep,
    sweep_config_from_text,
)
from .tables import SchemeConfig, build_scheme


def _add_sweep_parser(subparsers) -> None:
    parser = subparsers.add_parser("sweep", help="run or resume a budget sweep")
    parser.add_argument("--config", help="key-value config file")
    parser.add_argument("--dataset", help="movielens_100k or synthetic_power_law")
    parser.add_argument("--methods", help="comma-separated methods; '+mux' suffix multiplexes")
    parser.add_argument("--multipliers", help="comma-separated budget multipliers")
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--resume", action="store_true", help="continue from an existing journal"
    )


def _sweep_config_from_args(args) -> SweepConfig:
    if args.config:
        config = sweep_config_from_text(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = SweepConfig()
    overrides = {}
    if args.dataset is not None:
        overrides["dataset"] = args.dataset
    if args.methods is not None:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.multipliers is not None:
        overrides["multipliers"] = tuple(
            float(m) for m in args.multipliers.split(",") if m.strip()
        )
    for name in ("replicates", "epochs", "steps", "batch", "seed"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    return config


def _cmd_sweep(args) -> int:
    config = _sweep_config_from_args(args)
    out = Path(args.out)
    journal = out / "runlog.jsonl"
    if journal.is_file() and not args.resume:
        print(
            f"error: {journal} already exists; pass --resume to continue it "
            "or choose a fresh --out",
            file=sys.stderr,
        )
        return 2
    done = 0

    def progress(record):
        nonlocal done
        done += 1
        status = record["status"]
        extra = f"auc={record['auc']:.4f}" if status == "ok" else record["error"]
        print(f"[{done}] {record['key']}: {status} ({extra})", flush=True)

    summary = run_sweep(config, out, progress=progress)
    journal_records = list(sweep_mod._read_journal(journal).values())
    emit_report(journal_records, out / "report.csv", out / "summary.json")
    print(
        "scheduled={scheduled} completed={completed} failed={failed} "
        "skipped={skipped}".format(**summary)
    )
    print(f"results: {summary['results']}")
    return 0 if summary["completed"] > 0 else 2


def _cmd_pareto(args) -> int:
    rows = read_results_csv(args.results)
    frontier = pareto_frontier(rows, per_method=args.per_method)
    keep = {(r["method"], r["variant"], r["multiplier"], r["seed"]) for r in frontier}
    lines = [",".join(sweep_mod.RESULT_COLUMNS)]
    text = Path(args.results).read_text(encoding="utf-8").strip().split("\n")
    for row, line in zip(rows, text[1:]):
        if (row["method"], row["variant"], row["multiplier"], row["seed"]) in keep:
            lines.append(line)
    output = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(output, encoding="utf-8")
    else:
        sys.stdout.write(output)
    return 0


def _cmd_probe(args) -> int:
    if args.dataset == "movielens_100k":
        dataset = load_movielens_100k(num_synthetic=args.size, seed=args.dataset_seed)
    else:
        dataset = synthetic_power_law(
            args.size, num_features=args.features, vocab_size=args.vocab, seed=args.dataset_seed
        )
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    rows = probe_experiment(
        dataset,
        sizes,
        seeds,
        width=args.width,
        epochs=args.epochs,
        batch=args.batch,
        lr=args.lr,
    )
    output = probe_rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(output, encoding="utf-8")
    else:
        sys.stdout.write(output)
    return 0


def _cmd_sketch_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    print("instance  scheme   mean_err/se  var_err/se  status")
    for index in range(args.instances):
        n1, n2 = 8, 8
        x1 = BagVector(rng.integers(0, 2, size=n1).astype(np.int8))
        x2 = BagVector(rng.integers(0, 2, size=n2).astype(np.int8))
        y1 = BagVector(rng.integers(0, 2, size=n1).astype(np.int8))
        y2 = BagVector(rng.integers(0, 2, size=n2).astype(np.int8))
        closed = concat_scheme_moments(x1, x2, y1, y2, 4, 6)
        mc = monte_carlo_moments(
            x1, x2, y1, y2, 4, 6, trials=args.trials, seed=int(rng.integers(1 << 48))
        )
        for name, closed_pair, mc_pair, se in (
            ("unified", closed.unified, mc.unified, mc.unified_se),
            ("hashed", closed.hashed, mc.hashed, mc.hashed_se),
        ):
            mean_ratio = abs(mc_pair.mean - closed_pair.mean) / max(se[0], 1e-12)
            var_ratio = abs(mc_pair.variance - closed_pair.variance) / max(se[1], 1e-12)
            ok = mean_ratio <= 4.0 and var_ratio <= 4.0
            failures += not ok
            print(
                f"{index:8d}  {name:7s}  {mean_ratio:10.3f}  {var_ratio:10.3f}  "
                f"{'pass' if ok else 'FAIL'}"
            )
    print(f"{'all checks passed' if failures == 0 else f'{failures} checks failed'}")
    return 0 if failures == 0 else 1


_GRADCHECK_SCHEMES = (
    ("collisionless", {}),
    ("hashing_trick", {}),
    ("hash_embedding", {"k": 2, "p": 0.2}),
    ("hashednet", {}),
    ("robe_z", {"z": 2}),
    ("comp_qr", {"k": 2}),
    ("comp_pq", {"k": 2}),
    ("unified", {}),
    ("multisize_unified", {}),
)


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    print("scheme              head      max_rel_err  status")
    for kind, extra in _GRADCHECK_SCHEMES:
        dims = (4, 8) if kind == "multisize_unified" else (4, 4)
        config = SchemeConfig(kind=kind, d=dims, budget=600, **extra)
        scheme = build_scheme(config, [20, 20], seed=int(rng.integers(1 << 30)))
        values = rng.integers(0, 20, size=(4, 2))
        labels = rng.integers(0, 2, size=4).astype(float)
        for head in ("logistic", "dcn_mlp"):
            spec = (
                ModelSpec("logistic", dims)
                if head == "logistic"
                else ModelSpec("dcn_mlp", dims, cross_layers=1, dense_layers=(6,))
            )
            model = build_model(spec, seed=int(rng.integers(1 << 30)))
            result = full_gradient_check(model, scheme, (values, labels))
            ok = result.max_rel_err <= args.tolerance
            failures += not ok
            print(
                f"{kind:18s}  {head:8s}  {result.max_rel_err:11.3e}  "
                f"{'pass' if ok else 'FAIL'}"
            )
    print(f"{'all checks passed' if failures == 0 else f'{failures} checks failed'}")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embmux", description="compressed embedding benchmark harness"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_sweep_parser(subparsers)

    pareto = subparsers.add_parser("pareto", help="extract the Pareto frontier")
    pareto.add_argument("--results", required=True, help="results.csv from a sweep")
    pareto.add_argument("--out", help="output CSV (stdout when omitted)")
    pareto.add_argument("--per-method", action="store_true", help="frontier within each method")

    probe = subparsers.add_parser("probe", help="angle/norm probe across table sizes")
    probe.add_argument("--dataset", default="synthetic_power_law")
    probe.add_argument("--size", type=int, default=40_000, help="examples to generate")
    probe.add_argument("--dataset-seed", type=int, default=0)
    probe.add_argument("--features", type=int, default=8)
    probe.add_argument("--vocab", type=int, default=2048)
    probe.add_argument("--sizes", required=True, help="comma-separated table sizes (rows)")
    probe.add_argument("--seeds", default="0,1,2,3,4")
    probe.add_argument("--width", type=int, default=8)
    probe.add_argument("--epochs", type=int, default=1)
    probe.add_argument("--batch", type=int, default=256)
    probe.add_argument("--lr", type=float, default=0.01)
    probe.add_argument("--out", help="output CSV (stdout when omitted)")

    sketch = subparsers.add_parser("sketch-check", help="Monte Carlo vs closed-form moments")
    sketch.add_argument("--instances", type=int, default=5)
    sketch.add_argument("--trials", type=int, default=20_000)
    sketch.add_argument("--seed", type=int, default=0)

    grad = subparsers.add_parser("gradcheck", help="finite-difference gradient check")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--tolerance", type=float, default=1e-4)

    return parser


_COMMANDS = {
    "sweep": _cmd_sweep,
    "pareto": _cmd_pareto,
    "probe": _cmd_probe,
    "sketch-check": _cmd_sketch_check,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
