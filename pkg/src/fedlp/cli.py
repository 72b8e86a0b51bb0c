"""Command-line entry point.

Subcommands:
  run              execute an experiment from a config file, write metrics CSV
                   and a reproducibility manifest
  verify-prop1     Monte-Carlo check of the masked-aggregation ratio
  partition-stats  print per-client sample counts and class histograms

Exit codes: 0 success, 1 runtime error, 2 configuration error. Any --key=value
flag after a config path overrides that key in the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_to_dict, load_config
from .data import run_partitioner
from .errors import ConfigError, FedlpError
from .metrics import emit_csv, summary_table, verify_prop1
from .orchestrator import FederatedSystem
from .rng import derive_seed, substream


def _split_overrides(extras: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    bad = []
    for item in extras:
        if item.startswith("--") and "=" in item:
            key, _, value = item[2:].partition("=")
            overrides[key] = value
        else:
            bad.append(item)
    if bad:
        raise ConfigError([f"malformed override {item!r} (expected --key=value)" for item in bad])
    return overrides


def _print_config_error(exc: ConfigError) -> None:
    print("configuration error:", file=sys.stderr)
    for violation in exc.violations:
        print(f"  - {violation}", file=sys.stderr)


def _load(config_path: str, args: argparse.Namespace, extras: list[str]) -> ExperimentConfig:
    overrides = _split_overrides(extras)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = str(args.workers)
    return load_config(config_path, overrides)


def cmd_run(args: argparse.Namespace, extras: list[str]) -> int:
    try:
        cfg = _load(args.config, args, extras)
    except ConfigError as exc:
        _print_config_error(exc)
        return 2
    try:
        system = FederatedSystem(cfg)
        result = system.run()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "metrics.csv"
        manifest_path = out_dir / "manifest.json"
        emit_csv(result.metrics, csv_path)
        manifest = {
            "tool": "fedlp",
            "version": __version__,
            "master_seed": cfg.master_seed,
            "config": config_to_dict(cfg),
            "artifacts": {"metrics_csv": str(csv_path), "manifest": str(manifest_path)},
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if args.table:
            print(summary_table(cfg.scheme, result.metrics))
        if result.personalized_accuracy is not None:
            mean_pers = float(np.mean(list(result.personalized_accuracy.values())))
            print(f"personalized_accuracy_mean={mean_pers!r}")
        last = [m for m in result.metrics if m.test_accuracy is not None][-1]
        print(
            f"round={last.round_index} acc={last.test_accuracy!r} "
            f"up={last.upload_params} down={last.download_params}"
        )
        return 0
    except FedlpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_verify_prop1(args: argparse.Namespace) -> int:
    problems = []
    if args.k < 1:
        problems.append("--k must be >= 1")
    if not 0.0 <= args.p <= 1.0:
        problems.append("--p must lie in [0, 1]")
    if args.trials < 1:
        problems.append("--trials must be >= 1")
    if problems:
        _print_config_error(ConfigError(problems))
        return 2
    report = verify_prop1(args.k, args.p, args.trials, substream(args.seed, "prop1"))
    print(f"k={report.k}")
    print(f"p={report.p!r}")
    print(f"trials={report.trials}")
    print(f"empirical_ratio={report.empirical_ratio!r}")
    print(f"closed_form={report.closed_form!r}")
    print(f"abs_error={report.abs_error!r}")
    print(f"std_error={report.std_error!r}")
    # 1e-12 absorbs degenerate zero-variance cases such as p=1
    return 0 if report.abs_error < 3.0 * report.std_error + 1e-12 else 1


def cmd_partition_stats(args: argparse.Namespace, extras: list[str]) -> int:
    try:
        cfg = _load(args.config, args, extras)
    except ConfigError as exc:
        _print_config_error(exc)
        return 2
    try:
        system = FederatedSystem(cfg)
        train = system.train
        total = 0
        for client in system.clients:
            labels = train.labels[client.data_indices]
            hist = np.bincount(labels, minlength=train.num_classes)
            total += client.data_indices.size
            print(f"client={client.id} n={client.data_indices.size} hist={','.join(map(str, hist))}")
        print(f"total={total}")
        return 0
    except FedlpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedlp", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"fedlp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("config", help="path to the experiment config file")
    run_p.add_argument("--seed", type=int, default=None, help="master seed (overrides the file)")
    run_p.add_argument("--out", default="fedlp_out", help="output directory for CSV and manifest")
    run_p.add_argument("--workers", type=int, default=None, help="parallel training workers (1 = serial)")
    run_p.add_argument("--table", action="store_true", help="print a summary comparison table")

    ver_p = sub.add_parser("verify-prop1", help="Monte-Carlo check of the masked-aggregation ratio")
    ver_p.add_argument("--k", type=int, required=True, help="number of participating clients")
    ver_p.add_argument("--p", type=float, required=True, help="layer-preserving rate")
    ver_p.add_argument("--trials", type=int, default=10**6, help="Monte-Carlo trials")
    ver_p.add_argument("--seed", type=int, required=True, help="RNG seed")

    stats_p = sub.add_parser("partition-stats", help="print per-client sample counts and histograms")
    stats_p.add_argument("config", help="path to the experiment config file")
    stats_p.add_argument("--seed", type=int, default=None, help="master seed (overrides the file)")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    if args.command == "run":
        return cmd_run(args, extras)
    if args.command == "verify-prop1":
        if extras:
            _print_config_error(ConfigError([f"unrecognized argument {e!r}" for e in extras]))
            return 2
        return cmd_verify_prop1(args)
    if args.command == "partition-stats":
        return cmd_partition_stats(args, extras)
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
