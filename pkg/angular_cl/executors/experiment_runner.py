"""
Experiment Runner

Schedules sequence runs for one experiment config and writes the artifacts.

Run directory layout (<output_dir>/<dataset>-<hash12>/):
    config.yaml                 resolved config
    run.json                    RunRecord
    results/<tag>.json          SequenceResult per (fold, seed)
    matrices/<tag>.csv          accuracy matrix per (fold, seed)
    checkpoints/<tag>/          per-task snapshots for resume
    drift/<tag>/                drift reports and metric separation tables per task

Features:
  - (fold, seed) runs in a process pool when workers > 1
  - Refuses to overwrite an existing run unless forced; can resume one
  - A failed run still writes its partial result and an incomplete RunRecord
  - Threshold sweeps over metric variants with a comparison table
"""

import logging
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from .. import __version__
from ..core.config_parser import (
    METRICS,
    DriftPolicy,
    ExperimentConfig,
    canonical_dict,
    config_hash,
    run_name,
    with_drift_policy,
)
from ..core.downloader import download_raw
from ..core.sequence_cache import MANIFEST, PrepareResult, cache_dir, load_cached_sequence, prepare_cache
from ..errors import ConfigError, RunExistsError
from ..exporters.record_exporter import read_json, write_accuracy_matrix, write_csv, write_json
from .continual_learner import ContinualLearner, SequenceResult

logger = logging.getLogger("angular_cl.runner")

RUN_RECORD = "run.json"
RUN_SCHEMA_VERSION = 1


# ── Records ───────────────────────────────────────────────────


@dataclass
class RunEntry:
    """One (fold, seed) sequence run."""

    fold: int | None
    seed: int
    result_path: str
    result: SequenceResult | None = None
    error: str | None = None
    seconds: float = 0.0

    @property
    def tag(self) -> str:
        return run_tag(self.fold, self.seed)

    @property
    def complete(self) -> bool:
        return self.error is None and self.result is not None and self.result.complete

    @property
    def final_average_accuracy(self) -> float | None:
        if self.result is None or not self.result.records:
            return None
        return self.result.average_accuracy[-1]

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "seed": self.seed,
            "result_path": self.result_path,
            "complete": self.complete,
            "final_average_accuracy": self.final_average_accuracy,
            "error": self.error,
            "seconds": self.seconds,
        }


@dataclass
class RunRecord:
    name: str
    config_hash: str
    dataset: str
    config: dict
    entries: list[RunEntry] = field(default_factory=list)
    wall_clock: float = 0.0
    code_version: str = __version__

    @property
    def complete(self) -> bool:
        return bool(self.entries) and all(e.complete for e in self.entries)

    def aggregate(self) -> tuple[float | None, float | None]:
        """Mean and population std of the final average accuracy over finished entries."""
        values = [e.final_average_accuracy for e in self.entries if e.complete]
        if not values:
            return None, None
        return float(np.mean(values)), float(np.std(values))

    def to_dict(self) -> dict:
        mean, std = self.aggregate()
        return {
            "schema_version": RUN_SCHEMA_VERSION,
            "name": self.name,
            "config_hash": self.config_hash,
            "dataset": self.dataset,
            "config": self.config,
            "complete": self.complete,
            "aggregate": {"mean_average_accuracy": mean, "std_average_accuracy": std},
            "entries": [e.to_dict() for e in self.entries],
            "wall_clock": self.wall_clock,
            "code_version": self.code_version,
        }


def run_tag(fold: int | None, seed: int) -> str:
    return f"fold{fold if fold is not None else 'none'}-seed{seed}"


def load_run_record(run_dir: str) -> RunRecord:
    """Read run.json and every SequenceResult file it references."""
    raw = read_json(os.path.join(run_dir, RUN_RECORD))
    if raw.get("schema_version") != RUN_SCHEMA_VERSION:
        raise ConfigError(f"{run_dir}: unsupported run record schema {raw.get('schema_version')}")
    entries = []
    for e in raw["entries"]:
        path = os.path.join(run_dir, e["result_path"])
        result = SequenceResult.from_dict(read_json(path)) if os.path.exists(path) else None
        entries.append(RunEntry(
            fold=e["fold"], seed=e["seed"], result_path=e["result_path"],
            result=result, error=e.get("error"), seconds=e.get("seconds", 0.0),
        ))
    return RunRecord(
        name=raw["name"],
        config_hash=raw["config_hash"],
        dataset=raw["dataset"],
        config=raw["config"],
        entries=entries,
        wall_clock=raw.get("wall_clock", 0.0),
        code_version=raw.get("code_version", ""),
    )


# ── Worker ────────────────────────────────────────────────────


@dataclass(frozen=True)
class RunJob:
    config: ExperimentConfig
    fold: int | None
    seed: int
    run_dir: str


def execute_job(job: RunJob) -> RunEntry:
    """Run one sequence and write its result files (module level so worker processes can pickle it)."""
    tag = run_tag(job.fold, job.seed)
    result_rel = os.path.join("results", f"{tag}.json")
    entry = RunEntry(fold=job.fold, seed=job.seed, result_path=result_rel)
    began = time.perf_counter()
    fold = (job.config.folds, job.fold) if job.fold is not None else None
    learner = ContinualLearner(
        job.config.continual,
        seed=job.seed,
        checkpoint_dir=os.path.join(job.run_dir, "checkpoints", tag),
        drift_dir=os.path.join(job.run_dir, "drift", tag),
    )
    try:
        sequence = load_cached_sequence(job.config.data_dir, job.config.sequence, fold=fold)
        learner.run_sequence(sequence)
    except Exception as e:
        logger.error("Run %s failed: %s", tag, e)
        entry.error = f"{type(e).__name__}: {e}"
    entry.result = learner.result
    entry.seconds = time.perf_counter() - began
    write_json(os.path.join(job.run_dir, result_rel), learner.result.to_dict())
    write_accuracy_matrix(os.path.join(job.run_dir, "matrices", f"{tag}.csv"), learner.result.accuracy_matrix)
    return entry


# ── Commands ──────────────────────────────────────────────────


def cmd_prepare(config: ExperimentConfig, download: bool = False, force: bool = False) -> PrepareResult:
    """Write the task-sequence cache for the config's dataset and sequence seed."""
    if download:
        download_raw(config.data_dir, config.sequence.base_dataset)
    return prepare_cache(config.data_dir, config.sequence, force=force)


def cmd_run(
    config: ExperimentConfig,
    force: bool = False,
    resume: bool = False,
    workers: int | None = None,
) -> RunRecord:
    """Run every (fold, seed) pair and write the RunRecord.

    One fold means the shuffled train/val split; k > 1 folds cut validation
    from each fold's heldout part.
    """
    run_dir = os.path.join(config.output_dir, run_name(config))
    if os.path.exists(os.path.join(run_dir, RUN_RECORD)):
        if force:
            shutil.rmtree(run_dir)
        elif not resume:
            raise RunExistsError(f"Run {run_dir} already exists; pass --force to overwrite or --resume to continue")
    if not os.path.exists(os.path.join(cache_dir(config.data_dir, config.sequence, config.sequence.seed), MANIFEST)):
        raise FileNotFoundError(
            f"No prepared cache for {config.sequence.dataset} under {config.data_dir}; run `prepare` first"
        )

    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.yaml"), "w", encoding="utf-8") as f:
        yaml.safe_dump({"name": config.name, **canonical_dict(config)}, f, sort_keys=True)

    folds = [None] if config.folds == 1 else list(range(config.folds))
    jobs = [RunJob(config, fold, seed, run_dir) for fold in folds for seed in config.seeds]
    workers = workers or config.workers
    began = time.perf_counter()
    logger.info("Running %d sequence(s) in %s with %d worker(s)", len(jobs), run_dir, workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(execute_job, jobs))
    else:
        entries = [execute_job(job) for job in jobs]

    record = RunRecord(
        name=config.name,
        config_hash=config_hash(config),
        dataset=config.sequence.dataset,
        config=canonical_dict(config),
        entries=entries,
        wall_clock=time.perf_counter() - began,
    )
    write_json(os.path.join(run_dir, RUN_RECORD), record.to_dict())
    return record


# ── Sweeps ────────────────────────────────────────────────────


@dataclass
class SweepRow:
    metric: str
    sigma_duplicate: float
    mean_average_accuracy: float | None
    std_average_accuracy: float | None
    final_widths: list[float]
    run: str
    best: bool = False


def parse_thresholds(values: list[str], default_metric: str) -> list[tuple[str, float]]:
    """Parse "metric:value" or bare "value" items; duplicates are dropped with a warning."""
    if not values:
        raise ConfigError("Threshold sweep needs at least one threshold", ["thresholds"])
    parsed, seen = [], set()
    for item in values:
        metric, _, number = str(item).rpartition(":")
        metric = metric or default_metric
        if metric not in METRICS:
            raise ConfigError(f"Unknown metric in threshold {item!r}", ["thresholds"])
        try:
            value = float(number)
        except ValueError:
            raise ConfigError(f"Threshold {item!r} is not a number", ["thresholds"]) from None
        if (metric, value) in seen:
            logger.warning("Duplicate threshold %s:%g ignored", metric, value)
            continue
        seen.add((metric, value))
        parsed.append((metric, value))
    return parsed


def sweep_policy(base: DriftPolicy, metric: str, value: float) -> DriftPolicy:
    policy = base.with_threshold(value) if metric == base.metric else DriftPolicy.for_metric(metric, value)
    reference = base if metric == base.metric else DriftPolicy.for_metric(metric)
    if policy.sigma_freeze != reference.sigma_freeze:
        logger.warning("sigma_freeze lowered to %g for %s threshold %g", policy.sigma_freeze, metric, value)
    return policy


def final_widths(record: RunRecord) -> list[float]:
    rows = [e.result.node_counts[-1] for e in record.entries if e.result is not None and e.result.records]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        return []
    return [float(w) for w in np.mean(np.array(rows, dtype=np.float64), axis=0)]


def cmd_sweep(
    config: ExperimentConfig,
    thresholds: list[str],
    force: bool = False,
    resume: bool = False,
    workers: int | None = None,
) -> list[SweepRow]:
    """One run per (metric, threshold); writes sweeps/<run>.csv with the best row flagged."""
    rows = []
    for metric, value in parse_thresholds(thresholds, config.continual.drift_policy.metric):
        policy = sweep_policy(config.continual.drift_policy, metric, value)
        record = cmd_run(with_drift_policy(config, policy), force=force, resume=resume, workers=workers)
        mean, std = record.aggregate()
        rows.append(SweepRow(metric, value, mean, std, final_widths(record), record_dir_name(record)))

    scored = [r for r in rows if r.mean_average_accuracy is not None]
    if scored:
        max(scored, key=lambda r: r.mean_average_accuracy).best = True
    write_csv(
        os.path.join(config.output_dir, "sweeps", f"{run_name(config)}.csv"),
        "sweep",
        (
            [r.metric, r.sigma_duplicate, r.mean_average_accuracy, r.std_average_accuracy,
             "/".join(f"{w:g}" for w in r.final_widths), r.run, int(r.best)]
            for r in rows
        ),
    )
    return rows


def record_dir_name(record: RunRecord) -> str:
    return f"{record.dataset}-{record.config_hash[:12]}"
