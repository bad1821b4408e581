#!/usr/bin/env python3
"""
Continual Learning Experiments - Main CLI Entry Point

Usage:
    # Cache the task sequence (optionally downloading the raw IDX files first):
    python run_experiments.py prepare --config experiment_configs/permuted_mnist.yaml --download

    # Run every fold and seed of an experiment:
    python run_experiments.py run --config experiment_configs/permuted_mnist.yaml

    # Reduced desk-scale preset, three seeds, four worker processes:
    python run_experiments.py run --config experiment_configs/permuted_mnist.yaml --desk-scale --seeds 0 1 2 --workers 4

    # Threshold sweep over metric variants:
    python run_experiments.py sweep --config experiment_configs/desk_scale.yaml \\
        --thresholds angular:20 angular:30 angular:40 euclidean_sq:1

    # Merge finished runs into a report:
    python run_experiments.py report runs/permuted-mnist-* --out reports/

    # Enable debug logging (per-iteration loss / validation accuracy):
    python run_experiments.py run --config ... --debug
    # Or via env var:
    ANGULAR_CL_LOG_LEVEL=DEBUG python run_experiments.py run --config ...

The default data directory comes from ANGULAR_CL_DATA_DIR (else ./data).
"""

import argparse
import copy
import logging
import os
import sys

from angular_cl.core.config_parser import (
    ExperimentConfig,
    apply_desk_scale,
    parse_experiment_file,
    run_name,
    validate_config,
)
from angular_cl.errors import ConfigError, RunExistsError
from angular_cl.executors.experiment_runner import cmd_prepare, cmd_run, cmd_sweep
from angular_cl.exporters.report_generator import cmd_report

LOG_LEVEL_ENV = "ANGULAR_CL_LOG_LEVEL"


def setup_logging() -> None:
    log_level = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, log_level, logging.WARNING),
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
        datefmt="%H:%M:%S",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Continual learning with angular drift - prepare data, run, sweep and report"
    )
    parser.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug logging (training loss / validation accuracy)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="Experiment definition file (YAML or JSON)")
        p.add_argument("--data-dir", help="Data directory (default: $ANGULAR_CL_DATA_DIR or ./data)")
        p.add_argument("--desk-scale", action="store_true", help="Apply the reduced 5-task preset")
        p.add_argument("--force", action="store_true", help="Overwrite existing outputs")

    def run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", help="Output directory for run directories")
        p.add_argument("--seeds", nargs="+", type=int, help="Override the seed list")
        p.add_argument("--folds", type=int, help="Override the number of folds")
        p.add_argument("--workers", type=int, help="Worker processes for (fold, seed) runs")
        p.add_argument("--resume", action="store_true", help="Continue an existing run from its checkpoints")

    prepare = sub.add_parser("prepare", help="Build the cached task sequence")
    experiment_flags(prepare)
    prepare.add_argument("--download", action="store_true", help="Fetch missing raw IDX files first")

    run = sub.add_parser("run", help="Run every fold and seed of an experiment")
    experiment_flags(run)
    run_flags(run)

    sweep = sub.add_parser("sweep", help="One run per duplicate threshold and metric")
    experiment_flags(sweep)
    run_flags(sweep)
    sweep.add_argument(
        "--thresholds",
        nargs="*",
        default=[],
        help='Thresholds as "metric:value" or bare values for the config metric',
    )

    report = sub.add_parser("report", help="Merge run directories into a report")
    report.add_argument("run_dirs", nargs="+", help="Run directories (each holding run.json)")
    report.add_argument("--out", default="reports", help="Report directory (default: reports/)")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Parse the config file and apply CLI overrides (flags win over file values)."""
    config = parse_experiment_file(args.config)
    if args.desk_scale:
        config = apply_desk_scale(config)
    config = copy.deepcopy(config)
    if args.data_dir:
        config.data_dir = args.data_dir
    if getattr(args, "out", None):
        config.output_dir = args.out
    if getattr(args, "seeds", None):
        config.seeds = list(args.seeds)
    if getattr(args, "folds", None) is not None:
        config.folds = args.folds
    errors = validate_config(config)
    if errors:
        raise ConfigError("Invalid experiment config after overrides", errors)
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    # Set debug logging
    if args.debug:
        os.environ[LOG_LEVEL_ENV] = "DEBUG"
    setup_logging()

    try:
        if args.command == "report":
            print(f"[Report] Merging {len(args.run_dirs)} run(s) -> {args.out}/")
            result = cmd_report(args.run_dirs, args.out)
            for dataset, rows in result.groups.items():
                print(f"  - {dataset}: {len(rows)} run(s)")
            for path in result.files:
                print(f"  {path}")
            return 0

        config = load_config(args)

        if args.command == "prepare":
            print(f"[Prepare] {config.sequence.dataset} ({config.sequence.num_tasks} tasks) in {config.data_dir}")
            result = cmd_prepare(config, download=args.download, force=args.force)
            if result.cache_hit:
                print(f"[Prepare] Cache hit: {result.path}")
            else:
                print(f"[Prepare] Wrote {len(result.rebuilt_tasks)} task file(s) to {result.path}")
            return 0

        if args.command == "run":
            jobs = config.folds * len(config.seeds)
            print(f"[Run] {config.name}: {jobs} sequence run(s) -> {config.output_dir}/{run_name(config)}")
            record = cmd_run(config, force=args.force, resume=args.resume, workers=args.workers)
            mean, std = record.aggregate()
            for entry in record.entries:
                status = "ok" if entry.complete else f"FAILED ({entry.error})"
                print(f"  - {entry.tag}: {status}")
            if mean is not None:
                print(f"[Run] Average accuracy {100 * mean:.2f} ± {100 * std:.2f}")
            if not record.complete:
                print("[Run] Run incomplete; partial results were written")
                return 1
            return 0

        if args.command == "sweep":
            print(f"[Sweep] {config.name}: {len(args.thresholds)} threshold(s)")
            rows = cmd_sweep(config, args.thresholds, force=args.force, resume=args.resume, workers=args.workers)
            for row in rows:
                acc = "n/a" if row.mean_average_accuracy is None else f"{100 * row.mean_average_accuracy:.2f}"
                widths = "/".join(f"{w:g}" for w in row.final_widths)
                mark = "  <- best" if row.best else ""
                print(f"  - {row.metric}:{row.sigma_duplicate:g}  acc {acc}  widths {widths}{mark}")
            return 0
    except ConfigError as e:
        print(f"[{args.command.capitalize()}] {e}")
        return 2
    except (RunExistsError, FileNotFoundError) as e:
        print(f"[{args.command.capitalize()}] {e}")
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
