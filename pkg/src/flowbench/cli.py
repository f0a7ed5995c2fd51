"""Command-line interface exposing the pipeline end to end.

Subcommands: ingest, synth, info, split, fit-scalers, export, eval.
Experiment options load from a flat TOML config file; command-line flags
mirror the config fields in kebab-case and win over file values. The
FLOWBENCH_DATA_ROOT environment variable provides a default root for
relative store paths. Failures print one machine-parsable line to stderr
(`error: <Kind>: <message>`) and exit nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .batching import table_in_order
from .config import (
    SCOPE_SCALERS,
    config_from_mapping,
    expand_period,
    load_config_file,
    registry_entry,
    validate,
)
from .errors import FlowbenchError
from .metrics import join_predictions, load_predictions_csv, report, write_report, write_series_csv
from .scaling import fit_scalers_cached
from .split import materialize_cached
from .store import Store, ingest
from .synth import DriftEvent, NovelArrival, SynthSpec, generate
from .table import write_csv

#: CLI flag (dest name) for every DatasetConfig field, one-to-one.
CONFIG_FLAGS = {
    "dataset_id": "Dataset id the config refers to (must match the store manifest)",
    "size_tier": "Size tier: XS, S, M, L, or ORIG",
    "tier_targets": "Desk-scale tier targets, e.g. XS=1000,S=2500,M=5000,L=10000",
    "train_period": "Train dates: week token (W-2022-44), range (a..b), or date list",
    "train_date_weights": "Comma-separated per-train-date weights",
    "test_period": "Test dates: same forms as --train-period",
    "val_approach": "Validation approach: split-from-train or separate-dates",
    "val_period": "Validation dates (separate-dates approach only)",
    "val_fraction": "Validation fraction when splitting from train",
    "app_selection": "Class selection: all-known, top-x, explicit-unknown, or fixed",
    "top_x": "How many most-frequent classes are known (top-x mode)",
    "known_apps": "Comma-separated known classes (fixed mode)",
    "unknown_apps": "Comma-separated unknown classes (explicit-unknown or fixed mode)",
    "fit_fraction": "Fraction of the train set used to fit scalers",
    "psizes_scaler": "Packet-size scaler: standard, robust, minmax, or none",
    "ipt_scaler": "Inter-packet-time scaler: standard, robust, minmax, or none",
    "fstats_scaler": "Flow-statistics scaler: standard, robust, minmax, or none",
    "psizes_max_clip": "Replace packet sizes larger than this before scaling",
    "ipt_min_clip": "Raise inter-packet times smaller than this before scaling",
    "ipt_max_clip": "Replace inter-packet times larger than this before scaling",
    "fstats_quantile_clip_q": "Clip flow statistics above their q-quantile before scaling",
    "seed": "Seed for every deterministic sampling decision",
    "strict_time_order": "Reject configs whose train/val dates do not precede test dates",
    "train_size": "Absolute cap on the (pre-validation) train set",
    "val_size": "Absolute cap on the validation set (separate-dates approach)",
    "test_size": "Absolute cap on the test set",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("dataset config (overrides --config file values)")
    for name, help_text in CONFIG_FLAGS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", help=help_text)
    parser.add_argument("--config", help="Flat TOML config file")


def _parse_tier_targets(raw: str) -> dict[str, int]:
    out = {}
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        tier, _, value = tok.partition("=")
        out[tier.strip().upper()] = int(value)
    return out


def _collect_config(args: argparse.Namespace) -> dict:
    doc = dict(load_config_file(args.config)) if args.config else {}
    for name in CONFIG_FLAGS:
        value = getattr(args, f"cfg_{name}", None)
        if value is None:
            continue
        if name == "tier_targets":
            doc[name] = _parse_tier_targets(value)
        elif name in ("train_date_weights", "known_apps", "unknown_apps"):
            doc[name] = [tok.strip() for tok in value.split(",") if tok.strip()]
        else:
            doc[name] = value
    return doc


def resolve_store_path(raw: str) -> Path:
    """Resolve a store argument, falling back to FLOWBENCH_DATA_ROOT."""
    path = Path(raw)
    if (path / "manifest.json").is_file():
        return path
    root = os.environ.get("FLOWBENCH_DATA_ROOT")
    if root and not path.is_absolute():
        candidate = Path(root) / raw
        if (candidate / "manifest.json").is_file():
            return candidate
    return path


def _open_store(args: argparse.Namespace) -> Store:
    return Store.open(resolve_store_path(args.store))


def _prepare(args: argparse.Namespace):
    store = _open_store(args)
    doc = _collect_config(args)
    doc.setdefault("dataset_id", store.manifest.dataset_id)
    config = config_from_mapping(doc)
    validated = validate(config, store.manifest)
    return store, validated


def cmd_ingest(args: argparse.Namespace) -> int:
    manifest = ingest(
        args.csv, args.dataset_id, args.out, overwrite=args.overwrite, l_ppi=args.l_ppi
    )
    print(
        f"ingested {manifest.total_rows} rows into {args.out} "
        f"({len(manifest.dates)} dates, {len(manifest.classes)} classes)"
    )
    return 0


def _parse_drift(raw: str) -> DriftEvent:
    try:
        date, fraction, shift = raw.split(":")
        return DriftEvent(date=date, class_fraction=float(fraction), size_shift=float(shift))
    except ValueError:
        raise FlowbenchError(f"bad --drift value {raw!r}; want DATE:FRACTION:SHIFT") from None


def _parse_novel(raw: str) -> NovelArrival:
    try:
        name, date = raw.split(":")
        return NovelArrival(class_name=name, first_date=date)
    except ValueError:
        raise FlowbenchError(f"bad --novel value {raw!r}; want CLASS:DATE") from None


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        n_classes=args.n_classes,
        dates=tuple(expand_period(args.dates)),
        rows_per_date=args.rows_per_date,
        popularity_exponent=args.popularity_exponent,
        drift_events=tuple(_parse_drift(d) for d in args.drift or ()),
        novel_arrivals=tuple(_parse_novel(n) for n in args.novel or ()),
        seed=args.seed,
        dataset_id=args.dataset_id,
    )
    manifest = generate(spec, args.out, overwrite=args.overwrite)
    print(
        f"generated {manifest.total_rows} rows into {args.out} "
        f"({len(manifest.dates)} dates, {len(manifest.classes)} classes)"
    )
    return 0


def cmd_info(args: argparse.Namespace) -> int:
    store = _open_store(args)
    m = store.manifest
    if args.verify:
        store.verify_checksums()
    print(f"dataset: {m.dataset_id}")
    print(f"rows: {m.total_rows} over {len(m.dates)} dates ({m.dates[0]} .. {m.dates[-1]})")
    print(f"classes: {len(m.classes)}")
    print(f"l_ppi: {m.l_ppi}, flow stats: {len(m.stat_names)} ({', '.join(m.stat_names)})")
    entry = registry_entry(m.dataset_id)
    if entry is not None:
        print(
            f"registry: {entry.summary()} ({entry.protocol}, collected "
            f"{entry.collection_start} .. {entry.collection_end})"
        )
    if args.verbose:
        for date in m.dates:
            print(f"  {date}: {m.date_rows[date]} rows")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    store, validated = _prepare(args)
    split, cached = materialize_cached(validated, store)
    if cached:
        print(f"reusing cached split {split.provenance}")
    else:
        print(f"materialized split {split.provenance}")
    print(
        f"train: {len(split.train)} rows, val: {len(split.val)} rows, "
        f"test: {len(split.test)} rows"
    )
    unknown_in_test = int(
        (split.class_map.ids_for(store.labels_of_rows(split.test)) == split.class_map.unknown_id).sum()
    ) if len(split.test) else 0
    print(
        f"classes: {len(split.class_map.known)} known, {len(split.class_map.unknown)} unknown; "
        f"unknown rows in test: {unknown_in_test}"
    )
    for name in ("train", "val", "test"):
        counts = split.per_date_counts[name]
        series = ", ".join(f"{d}:{counts[d]}" for d in sorted(counts))
        print(f"  {name} per date: {series if series else '(empty)'}")
    return 0


def _train_pool(split, validated):
    if validated.val_approach.value == "split-from-train":
        return np.sort(np.concatenate([split.train, split.val]))
    return split.train


def cmd_fit_scalers(args: argparse.Namespace) -> int:
    store, validated = _prepare(args)
    split, _ = materialize_cached(validated, store)
    fp = validated.fingerprint(SCOPE_SCALERS)
    scalers, hit = fit_scalers_cached(
        store, _train_pool(split, validated), validated.scaling, validated.seed, fp
    )
    if hit:
        print(f"cache hit {fp}")
    else:
        print(f"fitted scalers {fp} (fit sample {scalers.fit_sample_size} rows)")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    store, validated = _prepare(args)
    split, _ = materialize_cached(validated, store)
    scalers = None
    if args.scaled:
        fp = validated.fingerprint(SCOPE_SCALERS)
        scalers, _ = fit_scalers_cached(
            store, _train_pool(split, validated), validated.scaling, validated.seed, fp
        )
    table = table_in_order(
        store,
        split,
        args.split,
        scalers=scalers,
        shuffle=args.shuffle,
        seed=validated.seed if args.shuffle_seed is None else args.shuffle_seed,
        epoch=args.epoch,
    )
    write_csv(table, args.out)
    print(f"wrote {len(table)} {args.split} rows to {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    store, validated = _prepare(args)
    split, _ = materialize_cached(validated, store)
    row_id, predicted, scores = load_predictions_csv(args.preds)
    preds = join_predictions(store, split, row_id, predicted, scores)
    doc = report(preds, split.class_map.known, [float(f) for f in args.fpr or ()])
    write_report(doc, args.out)
    if args.series_csv:
        write_series_csv(doc, args.series_csv)
    acc = doc["overall"]["accuracy"]
    acc_text = "n/a" if acc is None else f"{acc:.4f}"
    print(f"wrote report to {args.out} (overall accuracy {acc_text})")
    for entry in doc["ood"]:
        print(
            f"  TPR@{entry['fpr_target']:g}FPR: {entry['tpr']:.4f} "
            f"(threshold {entry['threshold']}, achieved FPR {entry['achieved_fpr']:.4f})"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowbench",
        description="Dataset management for time-aware, open-world traffic classification.",
    )
    parser.add_argument("--version", action="version", version=f"flowbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Build a store from the external CSV format")
    p.add_argument("--csv", required=True, help="Input CSV path")
    p.add_argument("--dataset-id", required=True, help="Dataset id for the new store")
    p.add_argument("--out", required=True, help="Store directory to create")
    p.add_argument("--l-ppi", type=int, default=30, help="Max packet-sequence length")
    p.add_argument("--overwrite", action="store_true", help="Replace an existing store")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="Generate a synthetic store")
    p.add_argument("--out", required=True, help="Store directory to create")
    p.add_argument("--dataset-id", default="synthetic")
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--dates", required=True, help="Date range (a..b), list, or week token")
    p.add_argument("--rows-per-date", type=int, default=1000)
    p.add_argument("--popularity-exponent", type=float, default=1.0)
    p.add_argument("--drift", action="append", metavar="DATE:FRACTION:SHIFT",
                   help="Drift event (repeatable)")
    p.add_argument("--novel", action="append", metavar="CLASS:DATE",
                   help="Novel class arrival (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("info", help="Print manifest and registry metadata")
    p.add_argument("--store", required=True)
    p.add_argument("--verify", action="store_true", help="Verify partition checksums")
    p.add_argument("--verbose", action="store_true", help="Include per-date row counts")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("split", help="Materialize and persist the train/val/test split")
    p.add_argument("--store", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit-scalers", help="Fit feature scalers or reuse the cache")
    p.add_argument("--store", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_fit_scalers)

    p = sub.add_parser("export", help="Write one split as CSV")
    p.add_argument("--store", required=True)
    _add_config_flags(p)
    p.add_argument("--split", required=True, choices=("train", "val", "test"))
    p.add_argument("--out", required=True, help="Output CSV path")
    p.add_argument("--scaled", action="store_true", help="Apply the fitted scalers")
    p.add_argument("--shuffle", action="store_true",
                   help="Write rows in the batch-iterator order instead of ascending row_id")
    p.add_argument("--shuffle-seed", type=int, default=None,
                   help="Shuffle seed (defaults to the config seed)")
    p.add_argument("--epoch", type=int, default=0, help="Epoch for the shuffle order")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="Evaluate a prediction file against the test split")
    p.add_argument("--store", required=True)
    _add_config_flags(p)
    p.add_argument("--preds", required=True, help="CSV: row_id,predicted_label_id[,ood_score]")
    p.add_argument("--out", required=True, help="Report JSON path")
    p.add_argument("--fpr", action="append", help="FPR target for TPR@FPR (repeatable)")
    p.add_argument("--series-csv", default=None,
                   help="Also write the per-date series as CSV for plotting")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FlowbenchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
