"""Command-line pipeline: train populations, analyze snapshots, build
reports, run the oracle, convert snapshot formats.

Exit codes: 0 success, 1 internal/validation error, 2 usage/path error.
All outputs are deterministic given the same inputs; CNT_THREADS caps the
internal thread pool used to analyze independent snapshots (results are
collected in input order, so parallelism never changes the bytes).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets, ensemble, metrics, oracle, snapshot, trainer

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad invocation: missing paths, malformed flags/config documents."""


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CNT_THREADS", "1")))
    except ValueError:
        return 1


def _load_json(path: Path) -> dict:
    if not path.exists():
        raise UsageError(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"{path} is not valid JSON: {e}")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# train


def _dataset_from_config(doc: dict, config_dir: Path) -> tuple[trainer.Dataset, trainer.Dataset]:
    kind = doc.get("kind", "bundled")
    split_seed = int(doc.get("split_seed", 0))
    eval_fraction = float(doc.get("eval_fraction", 0.2))
    if kind == "bundled":
        full = datasets.load_bundled_digits()
    elif kind == "csv":
        path = config_dir / doc["path"]
        if not path.exists():
            raise UsageError(f"dataset file not found: {path}")
        full = datasets.load_digits_csv(path, pixel_max=float(doc.get("pixel_max", 16.0)))
    elif kind == "idx":
        images = config_dir / doc["images"]
        labels = config_dir / doc["labels"]
        for p in (images, labels):
            if not p.exists():
                raise UsageError(f"dataset file not found: {p}")
        full = datasets.load_idx_dataset(images, labels)
    elif kind == "blobs":
        full = datasets.gaussian_blobs(
            n_samples=int(doc.get("n_samples", 1000)),
            n_classes=int(doc.get("n_classes", 10)),
            n_features=int(doc.get("n_features", 64)),
            spread=float(doc.get("spread", 0.08)),
            seed=split_seed,
        )
    else:
        raise UsageError(f"unknown dataset kind {kind!r}")
    return datasets.train_eval_split(full, eval_fraction=eval_fraction, seed=split_seed)


def _snapshot_filename(out: Path, tag: str, seed: int, accuracy: float) -> Path:
    base = f"{tag}_seed{seed}_acc{accuracy:.4f}"
    path = out / f"{base}.cnts"
    k = 1
    while path.exists():  # deterministic disambiguation for equal rounded accuracies
        path = out / f"{base}_{k}.cnts"
        k += 1
    return path


def cmd_train(args) -> int:
    config_path = Path(args.config)
    doc = _load_json(config_path)
    try:
        cfg = trainer.train_config_from_dict(doc.get("train", {}))
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad train config: {e}")
    if args.seed_offset:
        from dataclasses import replace

        cfg = replace(cfg, seed=(cfg.seed + args.seed_offset) % 2**64)
    pop = doc.get("population", {})
    count = int(pop.get("count", 1))
    targets = pop.get("accuracy_targets") or []
    train_data, eval_data = _dataset_from_config(doc.get("dataset", {}), config_path.parent)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    members = trainer.generate_population(cfg, count, targets, train_data, eval_data)
    index = []
    for m in members:
        for snap in m.snapshots:
            path = _snapshot_filename(out, cfg.task_tag, m.seed, snap.meta.accuracy)
            path.write_bytes(snapshot.write_snapshot(snap))
            index.append(
                {
                    "file": path.name,
                    "seed": m.seed,
                    "epoch": snap.meta.epoch,
                    "accuracy": snap.meta.accuracy,
                    "target": m.target,
                    "reached": m.reached,
                }
            )
    _write_text(
        out / "population_index.json",
        _dump_json({"schema_version": metrics.SCHEMA_VERSION, "snapshots": index}),
    )
    print(f"wrote {len(index)} snapshots and population_index.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    paths = [Path(p) for p in args.inputs]
    for p in paths:
        if not p.exists():
            raise UsageError(f"no such snapshot: {p}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(path: Path) -> metrics.MetricRecord:
        try:
            snap = snapshot.load_snapshot(path)
        except (snapshot.SnapshotFormatError, snapshot.SnapshotValidationError) as e:
            raise RuntimeError(f"{path}: {e}") from e
        return metrics.analyze_snapshot(snap, with_disparity=args.disparity)

    n_threads = _threads()
    if n_threads > 1 and len(paths) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=n_threads) as pool:
            records = list(pool.map(one, paths))
    else:
        records = [one(p) for p in paths]

    named = []
    for path, rec in zip(paths, records):
        stem = path.name.removesuffix(".cnts.json").removesuffix(".cnts")
        _write_text(out / f"{stem}.metrics.json", metrics.metric_record_to_json(rec))
        named.append((stem, rec))
    _write_text(out / "metrics.csv", metrics.records_to_csv(named))
    print(f"analyzed {len(named)} snapshots -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _load_records(paths: list[Path]) -> list[metrics.MetricRecord]:
    records = []
    for p in paths:
        if not p.exists():
            raise UsageError(f"no such metric record: {p}")
        records.append(metrics.metric_record_from_json(p.read_text(encoding="utf-8")))
    return records


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.inputs]
    if not paths:
        raise UsageError("report requires at least one metric-record JSON")
    records = _load_records(paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.mode == "ensemble":
        bins = ensemble.bin_by_accuracy(records, min_population=args.min_population)
        report = ensemble.ensemble_report(
            bins, hist_bins=args.bins, bootstrap_rounds=args.bootstrap
        )
        _write_text(out / "ensemble_report.json", _dump_json(report.to_dict()))
        _write_text(out / "report_stats.csv", ensemble.ensemble_report_csv(report))
        for metric in sorted(report.summaries):
            _write_text(out / f"pdf_{metric}.csv", ensemble.distribution_csv(report, metric))
        for b, flagged in enumerate(report.underpopulated):
            if flagged:
                print(
                    f"warning: accuracy bin {b} holds {report.bin_counts[b]} records, "
                    f"below the minimum population of {args.min_population}",
                    file=sys.stderr,
                )
        print(f"ensemble report over {sum(report.bin_counts)} records -> {out}")
    else:
        report = ensemble.trajectory_report(records, hist_bins=args.bins)
        _write_text(out / "trajectory_report.json", _dump_json(report.to_dict()))
        _write_text(out / "fluctuation_errorbars.csv", ensemble.trajectory_errorbar_csv(report))
        print(f"trajectory report over {len(records)} snapshots -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise UsageError(f"no such snapshot: {path}")
    snap = snapshot.load_snapshot(path)
    try:
        results = oracle.verify_snapshot(snap, max_edges=args.oracle_cap)
    except oracle.EdgeCapError as e:
        print(f"error: {e}; raise --oracle-cap to allow it", file=sys.stderr)
        return EXIT_ERROR
    worst = 0.0
    ok = True
    for r in results:
        print(
            f"block {r['layer_index']} ({r['kind']}, {r['n_edges']} edges): "
            f"max abs deviation {r['max_abs_deviation']:.3e} "
            f"(tolerance {r['tolerance']:.0e})"
        )
        worst = max(worst, r["max_abs_deviation"])
        ok = ok and r["within_tolerance"]
    print(f"overall max abs deviation: {worst:.3e} -> {'OK' if ok else 'FAIL'}")
    if args.export_edges:
        export_dir = Path(args.export_edges)
        export_dir.mkdir(parents=True, exist_ok=True)
        for j, block in enumerate(snap.layers):
            el = oracle.unroll_layer(block, j, args.oracle_cap)
            suffix = "csv" if args.edge_format == "csv" else "graphml"
            (export_dir / f"layer{j}.{suffix}").write_bytes(
                oracle.export_edge_list(el, args.edge_format)
            )
    return EXIT_OK if ok else EXIT_ERROR


# ---------------------------------------------------------------------------
# convert


def cmd_convert(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise UsageError(f"no such snapshot: {src}")
    snap = snapshot.load_snapshot(src)
    dst = Path(args.output)
    dst.parent.mkdir(parents=True, exist_ok=True)
    snapshot.save_snapshot(dst, snap)
    print(f"{src} -> {dst}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cntnets",
        description="Complex-network metrics over neural network weight snapshots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a snapshot population from a config JSON")
    p.add_argument("--config", required=True, help="config JSON (train/population/dataset)")
    p.add_argument("--out", required=True, help="output directory for CNTS files")
    p.add_argument("--seed-offset", type=int, default=0, help="shift the base seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="compute metric records for snapshots")
    p.add_argument("inputs", nargs="+", help="CNTS or .cnts.json snapshot files")
    p.add_argument("--out", required=True)
    p.add_argument("--disparity", action="store_true", help="include node disparity")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="ensemble or trajectory report from metric records")
    p.add_argument("inputs", nargs="+", help="metric-record JSON files")
    p.add_argument("--mode", choices=("ensemble", "trajectory"), default="ensemble")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=ensemble.DEFAULT_HIST_BINS,
                   help="histogram bin count")
    p.add_argument("--bootstrap", type=int, default=0,
                   help="bootstrap rounds for trend-statistic spread (0 = off)")
    p.add_argument("--min-population", type=int, default=ensemble.DEFAULT_MIN_POPULATION,
                   help="per-bin population below which a warning is printed")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle", help="verify fast metrics against graph expansion")
    p.add_argument("input", help="snapshot file")
    p.add_argument("--oracle-cap", type=int, default=oracle.DEFAULT_EDGE_CAP,
                   help="maximum edges the expansion may materialize")
    p.add_argument("--export-edges", default=None, help="directory for edge-list exports")
    p.add_argument("--edge-format", choices=("csv", "graph_exchange"), default="csv")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("convert", help="convert between CNTS and the JSON variant")
    p.add_argument("input")
    p.add_argument("output", help="target path; a .json suffix writes the JSON variant")
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (
        snapshot.SnapshotFormatError,
        snapshot.SnapshotValidationError,
        oracle.EdgeCapError,
        trainer.TrainingDivergedError,
        ValueError,
        RuntimeError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
