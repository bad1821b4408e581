"""
Drift categorization

Compares a previous snapshot W_{i-1} with a candidate W_i node by node and
assigns each pre-existing hidden node one category:

    duplicate   rho > sigma_duplicate
    freeze      rho < sigma_freeze
    regularize  otherwise

Nodes that only exist in the candidate (added for the current task) are not
reported. When a layer's input grew, only the common coordinate prefix is
compared.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..core.config_parser import DriftPolicy
from ..errors import ConsistencyError
from ..exporters.record_exporter import write_csv
from ..model.network import NodeId
from ..model.snapshot import WeightSnapshot
from .metrics import ANGULAR, EUCLIDEAN_SQ, MANHATTAN, metric_rows

FREEZE = "freeze"
REGULARIZE = "regularize"
DUPLICATE = "duplicate"

REPORT_COLUMNS = ["layer", "unit", "rho", "category"]

DEFAULT_GRIDS = {
    ANGULAR: (10.0, 20.0, 30.0, 40.0, 60.0),
    EUCLIDEAN_SQ: (0.01, 0.1, 1.0, 10.0, 100.0),
    MANHATTAN: (0.1, 1.0, 10.0, 100.0, 1000.0),
}


@dataclass(frozen=True)
class DriftEntry:
    node: NodeId
    rho: float
    category: str


@dataclass
class DriftReport:
    entries: list[DriftEntry]
    prev_task: int
    cand_task: int
    policy: DriftPolicy

    def nodes(self, category: str) -> list[NodeId]:
        return [e.node for e in self.entries if e.category == category]

    @property
    def duplicates(self) -> list[DriftEntry]:
        return [e for e in self.entries if e.category == DUPLICATE]

    def rho(self) -> np.ndarray:
        return np.array([e.rho for e in self.entries], dtype=np.float64)

    def counts(self) -> dict[str, int]:
        counts = {FREEZE: 0, REGULARIZE: 0, DUPLICATE: 0}
        for e in self.entries:
            counts[e.category] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "prev_task": self.prev_task,
            "cand_task": self.cand_task,
            "policy": {
                "metric": self.policy.metric,
                "sigma_duplicate": self.policy.sigma_duplicate,
                "sigma_freeze": self.policy.sigma_freeze,
                "zero_vector_angle": self.policy.zero_vector_angle,
            },
            "counts": self.counts(),
            "entries": [
                {"layer": e.node.layer, "unit": e.node.unit, "rho": e.rho, "category": e.category}
                for e in self.entries
            ],
        }

    def write_csv(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(REPORT_COLUMNS)
            for e in self.entries:
                writer.writerow([e.node.layer, e.node.unit, repr(e.rho), e.category])

    def write_json(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def categorize(rho: np.ndarray, policy: DriftPolicy) -> np.ndarray:
    """Category per drift value (object array of category names)."""
    rho = np.asarray(rho, dtype=np.float64)
    categories = np.full(rho.shape, REGULARIZE, dtype=object)
    categories[rho < policy.sigma_freeze] = FREEZE
    categories[rho > policy.sigma_duplicate] = DUPLICATE
    return categories


def layer_drift(prev: WeightSnapshot, cand: WeightSnapshot, policy: DriftPolicy) -> list[np.ndarray]:
    """Per-layer rho arrays over the nodes of `prev`."""
    if len(cand.hidden) != len(prev.hidden):
        raise ConsistencyError(
            f"Snapshots have {len(prev.hidden)} and {len(cand.hidden)} hidden layers"
        )
    result = []
    for l, (old, new) in enumerate(zip(prev.hidden, cand.hidden)):
        rows, cols = old.weights.shape
        if new.weights.shape[0] < rows or new.weights.shape[1] < cols:
            raise ConsistencyError(
                f"Layer {l}: candidate shape {new.weights.shape} does not extend {old.weights.shape}"
            )
        result.append(metric_rows(policy.metric, old.weights, new.weights[:rows, :cols], policy.zero_vector_angle))
    return result


def compute_drift(prev: WeightSnapshot, cand: WeightSnapshot, policy: DriftPolicy) -> DriftReport:
    """Drift rho per pre-existing hidden node and its category."""
    entries = []
    for l, rho in enumerate(layer_drift(prev, cand, policy)):
        for j, (value, category) in enumerate(zip(rho, categorize(rho, policy))):
            entries.append(DriftEntry(NodeId(l, j), float(value), category))
    return DriftReport(entries=entries, prev_task=prev.task, cand_task=cand.task, policy=policy)


# ── Separation diagnostics ────────────────────────────────────


@dataclass
class MetricSummary:
    metric: str
    histogram: np.ndarray
    bin_edges: np.ndarray
    mean: float
    std: float
    coefficient_of_variation: float


@dataclass(frozen=True)
class DiagnosticRow:
    metric: str
    threshold: float
    duplicate_count: int
    duplicates: tuple[NodeId, ...] = field(repr=False)


@dataclass
class DiagnosticsTable:
    rows: list[DiagnosticRow]
    summaries: dict[str, MetricSummary]

    def to_records(self) -> list[dict]:
        return [
            {
                "metric": r.metric,
                "threshold": r.threshold,
                "duplicate_count": r.duplicate_count,
                "coefficient_of_variation": self.summaries[r.metric].coefficient_of_variation,
            }
            for r in self.rows
        ]

    def write_csv(self, path: str) -> str:
        return write_csv(path, "separation", (
            [r["metric"], r["threshold"], r["duplicate_count"], repr(r["coefficient_of_variation"])]
            for r in self.to_records()
        ))


def _summary(metric: str, rho: np.ndarray, bins: int) -> MetricSummary:
    upper = 180.0 if metric == ANGULAR else max(float(rho.max()) if rho.size else 0.0, 1e-12)
    counts, edges = np.histogram(rho, bins=bins, range=(0.0, upper))
    mean = float(rho.mean()) if rho.size else 0.0
    std = float(rho.std()) if rho.size else 0.0
    return MetricSummary(metric, counts, edges, mean, std, std / mean if mean > 0 else 0.0)


def separation_diagnostics(
    prev: WeightSnapshot,
    cand: WeightSnapshot,
    policies: list[DriftPolicy],
    grids: dict[str, tuple[float, ...]] | None = None,
    bins: int = 20,
) -> DiagnosticsTable:
    """Compare how each metric spreads node drift and which nodes each threshold would duplicate.

    One row per (policy, grid threshold); grids default to DEFAULT_GRIDS per metric.
    """
    grids = {**DEFAULT_GRIDS, **(grids or {})}
    nodes = [NodeId(l, j) for l, layer in enumerate(prev.hidden) for j in range(layer.out_dim)]
    rows, summaries = [], {}
    for policy in policies:
        rho = np.concatenate(layer_drift(prev, cand, policy)) if nodes else np.zeros(0)
        summaries[policy.metric] = _summary(policy.metric, rho, bins)
        for threshold in grids[policy.metric]:
            picked = tuple(node for node, value in zip(nodes, rho) if value > threshold)
            rows.append(DiagnosticRow(policy.metric, float(threshold), len(picked), picked))
    return DiagnosticsTable(rows=rows, summaries=summaries)
