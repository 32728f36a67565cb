"""Command line experiment runner.

    fedcmfs run --config exp.cfg [--override key=value ...] [--out DIR] [--trace]

Exit codes: 0 success, 1 config error, 2 data error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .dataset import DatasetError, PartitionPlan, load_dataset, partition_clients, \
    train_test_split
from .evaluation import EvaluationError, MetricReport, evaluate_selection
from .federation import ProtocolError
from .fedcfc import SCHEMA_VERSION, FedCmfsParams, SelectionResult, run_fedcmfs

log = logging.getLogger("fedcmfs")

RESULT_COLUMNS = ["dataset", "n_clients", "seed", "ap", "cv", "hl", "rl", "fma", "fmi",
                  "n_selected", "ci_tests_total", "wall_seconds"]
METRICS = ["ap", "cv", "hl", "rl", "fma", "fmi"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class InvariantViolation(RuntimeError):
    pass


@dataclass
class CellResult:
    dataset: str
    n_clients: int
    seed: int
    selection: SelectionResult
    metrics: MetricReport
    selected_names: list[str]

    @property
    def row(self) -> dict:
        return {
            "dataset": self.dataset,
            "n_clients": self.n_clients,
            "seed": self.seed,
            **self.metrics.as_row(),
            "n_selected": len(self.selection.selected),
            "ci_tests_total": self.selection.stats["ci_tests_total"],
            "wall_seconds": self.selection.stats["wall_seconds"],
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset": self.dataset,
            "n_clients": self.n_clients,
            "seed": self.seed,
            "selected_names": self.selected_names,
            "metrics": {**self.metrics.as_row(), "flags": self.metrics.flags},
            "selection": self.selection.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CellResult:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d.get('schema_version')}")
        metrics = dict(d["metrics"])
        flags = metrics.pop("flags", {})
        return cls(
            dataset=d["dataset"],
            n_clients=d["n_clients"],
            seed=d["seed"],
            selection=SelectionResult.from_dict(d["selection"]),
            metrics=MetricReport(**{k: float(metrics[k]) for k in METRICS}, flags=flags),
            selected_names=list(d["selected_names"]),
        )


def cell_filename(dataset: str, n_clients: int, seed: int) -> str:
    return f"{dataset}_n{n_clients}_s{seed}.json"


def read_cell(path) -> CellResult:
    return CellResult.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summarize(cells: list[CellResult]) -> list[dict]:
    groups: dict[tuple, list[CellResult]] = {}
    for cell in cells:
        groups.setdefault((cell.dataset, cell.n_clients), []).append(cell)
    rows = []
    for (name, n), members in sorted(groups.items()):
        row = {"dataset": name, "n_clients": n, "n_seeds": len(members)}
        for col in METRICS + ["n_selected", "ci_tests_total", "wall_seconds"]:
            row[col] = float(np.mean([m.row[col] for m in members]))
        rows.append(row)
    return rows


def emit_report(cells: list[CellResult], out_dir) -> None:
    """Write results.csv, summary.csv and one provenance JSON per cell."""
    out = Path(out_dir)
    try:
        (out / "cells").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for cell in cells:
            row = cell.row
            writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    summary = summarize(cells)
    if summary:
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(summary[0]))
            writer.writeheader()
            for row in summary:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
    for cell in cells:
        path = out / "cells" / cell_filename(cell.dataset, cell.n_clients, cell.seed)
        path.write_text(json.dumps(cell.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


def _load_splits(cfg: RunConfig):
    kwargs = dict(format=cfg.format, label_count=cfg.label_count, data_kind=cfg.data_kind)
    if cfg.train_path and cfg.test_path:
        train = load_dataset(cfg.train_path, **kwargs)
        test = load_dataset(cfg.test_path, **kwargs)
        if train.feature_names != test.feature_names or train.label_names != test.label_names:
            raise DatasetError("train and test files have different columns")
        return train, test
    full = load_dataset(cfg.dataset, **kwargs)
    return train_test_split(full, cfg.test_fraction, cfg.split_seed)


def run_cell(cfg: RunConfig, train, test, n_clients: int, seed: int,
             trace_dir: Path | None = None) -> CellResult:
    plan = PartitionPlan(n_clients, cfg.fraction_low, cfg.fraction_high, seed)
    params = FedCmfsParams(cfg.alpha, cfg.k1, cfg.k2, cfg.max_cond,
                           cfg.fedcfr_pseudocode_variant, cfg.prefetch)
    trace = None
    if trace_dir is not None:
        trace_dir.mkdir(parents=True, exist_ok=True)
        trace = open(trace_dir / f"{cfg.name}_n{n_clients}_s{seed}.jsonl", "w",
                     encoding="utf-8")
    try:
        selection = run_fedcmfs(train, plan, params, cache_enabled=cfg.cache_enabled,
                                batch_size=cfg.batch_size, n_workers=cfg.n_workers,
                                trace=trace)
    finally:
        if trace is not None:
            trace.close()
    if not set(selection.selected) <= set(train.feature_ids):
        raise InvariantViolation("selection contains a non-feature variable")

    # the evaluator trains on the pooled, de-duplicated client rows
    rows = sorted({r for sh in partition_clients(train, plan) for r in sh.row_indices})
    pooled = train.subset(rows)
    try:
        metrics = evaluate_selection(pooled, test, selection.selected, cfg.mlknn_k,
                                     cfg.mlknn_smoothing, cfg.raw_coverage)
    except EvaluationError as exc:
        log.warning("cell n=%d seed=%d not evaluated: %s", n_clients, seed, exc)
        nan = math.nan
        metrics = MetricReport(nan, nan, nan, nan, nan, nan, flags={"error": str(exc)})
    names = [train.feature_names[f] for f in selection.selected]
    return CellResult(cfg.name, n_clients, seed, selection, metrics, names)


def run_experiment(cfg: RunConfig) -> list[CellResult]:
    """Run every (n_clients, seed) cell of ``cfg`` and write the report."""
    cfg.validate()
    train, test = _load_splits(cfg)
    out = Path(cfg.out)
    trace_dir = out / "trace" if cfg.trace_messages else None
    cells = []
    for n_clients in cfg.n_clients:
        for seed in cfg.seeds:
            log.info("running %s n_clients=%d seed=%d", cfg.name, n_clients, seed)
            cells.append(run_cell(cfg, train, test, n_clients, seed, trace_dir))
    emit_report(cells, out)
    (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")
    return cells


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcmfs",
        description="Select causal features for multi-label data held by several clients",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment described by a config file")
    run.add_argument("--config", required=True, help="flat key = value config file")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    run.add_argument("--out", help="output directory (overrides `out`)")
    run.add_argument("--trace", action="store_true", help="write the message trace")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.override)
    if args.out:
        overrides.append(f"out={args.out}")
    if args.trace:
        overrides.append("trace_messages=true")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cells = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ProtocolError, InvariantViolation) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for row in summarize(cells):
        print(", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
