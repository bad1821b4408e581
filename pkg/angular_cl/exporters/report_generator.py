"""
Report Generator

Merges finished runs into comparison tables. Every number comes from the
SequenceResult files a run directory references.

Outputs (in the report directory):
    summary.csv      one row per run, grouped by dataset
    forgetting.csv   accuracy[t][t] − accuracy[N−1][t] per split and task
    trajectory.csv   mean / std average accuracy after each task (plot data)
    separation.csv   mean duplicate count and drift spread per metric and
                     threshold over every drift report of a run
    report.md        human-readable summary rendered with jinja2

Runs on different datasets are never merged; each dataset gets its own
section. Both the cross-validation mean ± std and the first split's value
are shown.
"""

import glob
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from jinja2 import Environment

from ..executors.experiment_runner import RunEntry, RunRecord, load_run_record
from .record_exporter import read_csv, write_csv

logger = logging.getLogger("angular_cl.report")

# Published average accuracies (percent) quoted for comparison; never computed here.
REFERENCE_RESULTS = [
    ("permuted-mnist", "euclidean (DEN)", "1", 95.19),
    ("permuted-mnist", "angular", "30°", 96.49),
    ("permuted-fashion-mnist", "euclidean (DEN)", "0.1", 84.58),
    ("permuted-fashion-mnist", "angular", "30°", 86.01),
    ("rotated-mnist", "euclidean (DEN)", "0.1", 96.49),
    ("rotated-mnist", "angular", "20°", 97.66),
    ("permuted-mnist", "DEN", "", 94.90),
    ("permuted-mnist", "RWC", "", 93.80),
    ("permuted-mnist", "REC", "", 95.70),
    ("permuted-mnist", "EWC", "", 84.40),
    ("permuted-mnist", "single network", "", 17.4),
]


def _pct(value) -> str:
    return "n/a" if value is None else f"{100.0 * value:.2f}"


_env = Environment()
_env.filters["pct"] = _pct


# ── Template: report.md ───────────────────────────────────────

REPORT_TEMPLATE = _env.from_string('''\
# Continual learning report

Runs: {{ runs | length }}{% if skipped %} (skipped {{ skipped | length }}: {{ skipped | join(", ") }}){% endif %}

{% for dataset, rows in groups.items() %}
## {{ dataset }}

| run | strategy | metric | threshold | splits | avg accuracy (mean ± std) | first split | final widths | complete |
|-----|----------|--------|-----------|--------|---------------------------|-------------|--------------|----------|
{% for r in rows -%}
| {{ r.run }} | {{ r.strategy }} | {{ r.metric }} | {{ r.sigma_duplicate }} | {{ r.splits }} | {{ r.mean | pct }} ± {{ r.std | pct }} | {{ r.first | pct }} | {{ r.widths }} | {{ "yes" if r.complete else "no" }} |
{% endfor %}
{% if forgetting[dataset] %}
Mean forgetting per task (accuracy right after the task minus final accuracy):

| run | {% for t in forgetting[dataset][0].tasks %}task {{ t }} | {% endfor %}
|-----|{% for t in forgetting[dataset][0].tasks %}------|{% endfor %}
{% for f in forgetting[dataset] -%}
| {{ f.run }} | {% for v in f.drops %}{{ v | pct }} | {% endfor %}
{% endfor %}
{% endif %}
{% if separation[dataset] %}
Drift separation per metric (mean over every drift report; spread is std / mean of node drift):

| run | metric | threshold | reports | mean duplicates | spread |
|-----|--------|-----------|---------|-----------------|--------|
{% for _, run, metric, threshold, reports, duplicates, spread in separation[dataset] -%}
| {{ run }} | {{ metric }} | {{ threshold }} | {{ reports }} | {{ "%.1f" | format(duplicates | float) }} | {{ "%.3f" | format(spread | float) }} |
{% endfor %}
{% endif %}
{% endfor %}
## Published reference numbers

| dataset | model | threshold | average accuracy (%) |
|---------|-------|-----------|----------------------|
{% for dataset, model, threshold, acc in references -%}
| {{ dataset }} | {{ model }} | {{ threshold }} | {{ "%.2f" | format(acc) }} |
{% endfor %}
''')


@dataclass
class RunSummary:
    run: str
    dataset: str
    strategy: str
    metric: str
    sigma_duplicate: float
    splits: int
    mean: float | None
    std: float | None
    first: float | None
    widths: str
    complete: bool


@dataclass
class ReportResult:
    directory: str
    summaries: list[RunSummary]
    groups: dict[str, list[RunSummary]] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)


def _order(entry: RunEntry) -> tuple[int, int]:
    return (-1 if entry.fold is None else entry.fold, entry.seed)


def summarize(run: str, record: RunRecord) -> RunSummary:
    continual = record.config.get("continual", {})
    policy = continual.get("drift_policy", {})
    finished = sorted((e for e in record.entries if e.complete), key=_order)
    mean, std = record.aggregate()
    widths = ""
    if finished:
        widths = "/".join(str(w) for w in finished[0].result.node_counts[-1])
    return RunSummary(
        run=run,
        dataset=record.dataset,
        strategy=continual.get("strategy", "drift"),
        metric=policy.get("metric", ""),
        sigma_duplicate=policy.get("sigma_duplicate", float("nan")),
        splits=len(finished),
        mean=mean,
        std=std,
        first=finished[0].final_average_accuracy if finished else None,
        widths=widths,
        complete=record.complete,
    )


def forgetting_rows(run: str, record: RunRecord) -> list[list]:
    rows = []
    for entry in sorted(record.entries, key=_order):
        if not entry.complete:
            continue
        matrix = entry.result.accuracy_matrix
        last = matrix[-1]
        for t in range(len(matrix)):
            initial = matrix[t][t]
            rows.append([record.dataset, run, entry.fold, entry.seed, t,
                         repr(initial), repr(last[t]), repr(initial - last[t])])
    return rows


def trajectory_rows(run: str, record: RunRecord) -> list[list]:
    curves = [e.result.average_accuracy for e in record.entries if e.complete]
    if not curves or any(len(c) != len(curves[0]) for c in curves):
        return []
    stacked = np.array(curves, dtype=np.float64)
    return [
        [record.dataset, run, i, repr(float(stacked[:, i].mean())), repr(float(stacked[:, i].std()))]
        for i in range(stacked.shape[1])
    ]


def separation_rows(run: str, run_dir: str, record: RunRecord) -> list[list]:
    pooled: dict[tuple[str, float], list[tuple[float, float]]] = defaultdict(list)
    for entry in sorted(record.entries, key=_order):
        if not entry.complete:
            continue
        pattern = os.path.join(run_dir, "drift", entry.tag, "task-*-separation.csv")
        for path in sorted(glob.glob(pattern)):
            for row in read_csv(path, "separation"):
                pooled[(row["metric"], float(row["threshold"]))].append(
                    (float(row["duplicate_count"]), float(row["coefficient_of_variation"]))
                )
    rows = []
    for (metric, threshold), values in sorted(pooled.items()):
        counts, spreads = zip(*values)
        rows.append([record.dataset, run, metric, threshold, len(values),
                     repr(float(np.mean(counts))), repr(float(np.mean(spreads)))])
    return rows


def cmd_report(run_dirs: list[str], out_dir: str) -> ReportResult:
    """Merge run directories into CSV tables and a markdown summary."""
    records: dict[str, RunRecord] = {}
    dirs: dict[str, str] = {}
    skipped = []
    for run_dir in run_dirs:
        name = os.path.basename(os.path.normpath(run_dir))
        try:
            records[name] = load_run_record(run_dir)
            dirs[name] = run_dir
        except FileNotFoundError:
            logger.warning("No run record in %s, skipping", run_dir)
            skipped.append(name)

    summaries = [summarize(name, record) for name, record in records.items()]
    groups: dict[str, list[RunSummary]] = defaultdict(list)
    for s in summaries:
        groups[s.dataset].append(s)

    forgetting, trajectory, separation = [], [], []
    separation_tables: dict[str, list[list]] = defaultdict(list)
    forgetting_tables: dict[str, list[dict]] = defaultdict(list)
    for name, record in records.items():
        rows = forgetting_rows(name, record)
        forgetting.extend(rows)
        trajectory.extend(trajectory_rows(name, record))
        spread = separation_rows(name, dirs[name], record)
        separation.extend(spread)
        separation_tables[record.dataset].extend(spread)
        by_task: dict[int, list[float]] = defaultdict(list)
        for row in rows:
            by_task[row[4]].append(float(row[7]))
        if by_task:
            tasks = sorted(by_task)
            forgetting_tables[record.dataset].append(
                {"run": name, "tasks": tasks, "drops": [float(np.mean(by_task[t])) for t in tasks]}
            )

    os.makedirs(out_dir, exist_ok=True)
    files = [
        write_csv(os.path.join(out_dir, "summary.csv"), "summary", (
            [s.dataset, s.run, s.strategy, s.metric, s.sigma_duplicate, s.splits,
             s.mean, s.std, s.first, s.widths, int(s.complete)]
            for dataset in sorted(groups) for s in groups[dataset]
        )),
        write_csv(os.path.join(out_dir, "forgetting.csv"), "forgetting", forgetting),
        write_csv(os.path.join(out_dir, "trajectory.csv"), "trajectory", trajectory),
        write_csv(os.path.join(out_dir, "separation.csv"), "separation-summary", separation),
    ]
    markdown = REPORT_TEMPLATE.render(
        runs=summaries,
        skipped=skipped,
        groups={d: groups[d] for d in sorted(groups)},
        forgetting=forgetting_tables,
        separation=separation_tables,
        references=REFERENCE_RESULTS,
    )
    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w", encoding="utf-8") as f:
        f.write(markdown)
    files.append(md_path)
    return ReportResult(directory=out_dir, summaries=summaries, groups=dict(groups), files=files)
