"""
Continual Learner

Runs a task sequence through one network and returns structured results.

Per task after the first (strategy "drift"):
  1. add the task head, selective retraining (head with L1, then the
     reachable sub-network)
  2. expand every hidden layer by K units when validation accuracy is
     below expansion_ratio × mean final validation accuracy of earlier tasks
  3. reset every entry that existed in W_{i-1} back to W_{i-1}
  4. candidate W_i: an unfrozen copy trained on a fraction of the task
  5. drift per node, duplicate / freeze / regularize
  6. full training anchored to W_{i-1}, snapshot W_i, evaluate all heads

Strategy "naive" fine-tunes the shared body task after task with a fresh
head each time and no regularization.

A checkpoint directory makes runs resumable: W_i and the task record are
written after every task, and a rerun continues after the last complete one.
A drift directory receives, for every task after the first, the drift report
and a separation table comparing the three metrics on the same candidate.
"""

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import rng
from ..core.config_parser import METRICS, ContinualConfig, DriftPolicy
from ..core.datasets import TaskDataset, TaskSequence
from ..drift.categorize import DUPLICATE, FREEZE, DriftReport, compute_drift, separation_diagnostics
from ..errors import ConsistencyError, EmptyInputError
from ..model.network import Network, NodeId, hidden_param_name, head_param_name, init_network
from ..model.snapshot import WeightSnapshot, load_snapshot, restore_network, save_snapshot, take_snapshot
from ..optim.objectives import RegularizerSpec
from ..optim.trainer import TrainingHistory, eval_accuracy, train

logger = logging.getLogger("angular_cl.continual")

RESULT_SCHEMA_VERSION = 1

# Batch streams per task: stream = task_id * PHASES + phase
PHASE_FULL = 0
PHASE_HEAD = 1
PHASE_SUBNET = 2
PHASES = 3

# Weights at or below this magnitude do not connect a unit to the head.
REACH_EPS = 1e-6


# ── Results ───────────────────────────────────────────────────


@dataclass(frozen=True)
class DuplicationEntry:
    task: int
    node: NodeId
    rho: float
    clone: NodeId

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "layer": self.node.layer,
            "unit": self.node.unit,
            "rho": self.rho,
            "clone_layer": self.clone.layer,
            "clone_unit": self.clone.unit,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DuplicationEntry":
        return cls(
            task=int(raw["task"]),
            node=NodeId(int(raw["layer"]), int(raw["unit"])),
            rho=float(raw["rho"]),
            clone=NodeId(int(raw["clone_layer"]), int(raw["clone_unit"])),
        )


@dataclass(frozen=True)
class SelectiveRetrainResult:
    val_accuracy: float
    mask: dict[str, np.ndarray]
    units: tuple[NodeId, ...]
    stage1_val_accuracy: float


@dataclass
class TaskRecord:
    """What happened while learning one task."""

    task_id: int
    accuracy_row: list[float]
    widths: list[int]
    val_accuracy: float | None = None
    selective_val_accuracy: float | None = None
    expanded: list[NodeId] = field(default_factory=list)
    duplications: list[DuplicationEntry] = field(default_factory=list)
    drift_counts: dict[str, int] = field(default_factory=dict)
    frozen_count: int = 0
    # wall clock, not written to the result file
    seconds: float = field(default=0.0, compare=False)

    @property
    def average_accuracy(self) -> float:
        return float(np.mean(self.accuracy_row))

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "accuracy_row": self.accuracy_row,
            "average_accuracy": self.average_accuracy,
            "widths": self.widths,
            "val_accuracy": self.val_accuracy,
            "selective_val_accuracy": self.selective_val_accuracy,
            "expanded": [[n.layer, n.unit] for n in self.expanded],
            "duplications": [d.to_dict() for d in self.duplications],
            "drift_counts": self.drift_counts,
            "frozen_count": self.frozen_count,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TaskRecord":
        return cls(
            task_id=int(raw["task_id"]),
            accuracy_row=[float(a) for a in raw["accuracy_row"]],
            widths=[int(w) for w in raw["widths"]],
            val_accuracy=raw.get("val_accuracy"),
            selective_val_accuracy=raw.get("selective_val_accuracy"),
            expanded=[NodeId(int(l), int(u)) for l, u in raw.get("expanded", [])],
            duplications=[DuplicationEntry.from_dict(d) for d in raw.get("duplications", [])],
            drift_counts=dict(raw.get("drift_counts", {})),
            frozen_count=int(raw.get("frozen_count", 0)),
        )


@dataclass
class SequenceResult:
    """Accuracy matrix (row i: test accuracy on tasks 0..i after task i) and architecture history."""

    records: list[TaskRecord] = field(default_factory=list)
    complete: bool = False

    @property
    def accuracy_matrix(self) -> list[list[float]]:
        return [r.accuracy_row for r in self.records]

    @property
    def average_accuracy(self) -> list[float]:
        return [r.average_accuracy for r in self.records]

    @property
    def node_counts(self) -> list[list[int]]:
        return [r.widths for r in self.records]

    @property
    def duplication_log(self) -> list[DuplicationEntry]:
        return [d for r in self.records for d in r.duplications]

    def matrix(self) -> np.ndarray:
        """N×N array, NaN above the diagonal."""
        n = len(self.records)
        out = np.full((n, n), np.nan)
        for i, row in enumerate(self.accuracy_matrix):
            out[i, :len(row)] = row
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": RESULT_SCHEMA_VERSION,
            "complete": self.complete,
            "accuracy_matrix": self.accuracy_matrix,
            "average_accuracy": self.average_accuracy,
            "node_counts": self.node_counts,
            "duplication_log": [d.to_dict() for d in self.duplication_log],
            "tasks": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SequenceResult":
        version = raw.get("schema_version")
        if version != RESULT_SCHEMA_VERSION:
            raise ConsistencyError(f"Unsupported result schema version: {version}")
        return cls(
            records=[TaskRecord.from_dict(r) for r in raw["tasks"]],
            complete=bool(raw.get("complete", False)),
        )


# ── Learner ───────────────────────────────────────────────────


class ContinualLearner:
    """Owns one network for the duration of a sequence run."""

    def __init__(
        self,
        config: ContinualConfig,
        seed: int = 0,
        dtype=np.float32,
        checkpoint_dir: str | None = None,
        history_dir: str | None = None,
        drift_dir: str | None = None,
    ):
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.training = dataclasses.replace(config.training, seed=self.seed)
        self.checkpoint_dir = checkpoint_dir
        self.history_dir = history_dir
        self.drift_dir = drift_dir
        self.net: Network | None = None
        self.snapshot: WeightSnapshot | None = None
        self.final_val: dict[int, float] = {}
        self.result = SequenceResult()
        self._fingerprint: str | None = None

    # ── Helpers ──

    def _stream(self, task_id: int, phase: int) -> int:
        return task_id * PHASES + phase

    def _history_path(self, task_id: int, phase: str) -> str | None:
        if not self.history_dir:
            return None
        return os.path.join(self.history_dir, f"task-{task_id:03d}-{phase}.csv")

    def _val_accuracy(self, task: TaskDataset) -> float | None:
        if not len(task.val):
            return None
        return eval_accuracy(self.net, task.val.images, task.val.labels, task.spec.task_id,
                             self.training.eval_batch_size)

    def _record_val(self, task: TaskDataset, history: TrainingHistory) -> float | None:
        val = history.final_val_accuracy
        if val is None:
            val = self._val_accuracy(task)
        if val is not None:
            self.final_val[task.spec.task_id] = val
        return val

    def _export_drift(self, task_id: int, prev: WeightSnapshot, candidate: WeightSnapshot, report: DriftReport) -> None:
        """task-XXX.csv / .json with the drift report, task-XXX-separation.csv comparing every metric."""
        base = os.path.join(self.drift_dir, f"task-{task_id:03d}")
        report.write_csv(base + ".csv")
        report.write_json(base + ".json")
        active = self.config.drift_policy
        policies = [active if m == active.metric else DriftPolicy.for_metric(m) for m in METRICS]
        separation_diagnostics(prev, candidate, policies).write_csv(base + "-separation.csv")

    def _require_net(self) -> Network:
        if self.net is None:
            raise ConsistencyError("No task has been learned yet")
        return self.net

    # ── Algorithm steps ──

    def train_first_task(self, task0: TaskDataset) -> WeightSnapshot:
        """Fresh network trained on the first task with an L1 penalty mu on every weight matrix."""
        task_id = task0.spec.task_id
        self.net = init_network(self.config.hidden_widths, seed=self.seed,
                                input_dim=task0.train.images.shape[1], dtype=self.dtype)
        self.net.add_head(task_id, task0.spec.out_dim)
        reg = RegularizerSpec.l1(self.config.mu) if self.config.mu > 0 else RegularizerSpec.none()
        history = train(self.net, task0, task_id, self.training, reg,
                        stream=self._stream(task_id, PHASE_FULL),
                        history_path=self._history_path(task_id, "full"))
        self._record_val(task0, history)
        self.snapshot = take_snapshot(self.net, task_id)
        return self.snapshot

    def selective_retrain(self, task: TaskDataset) -> SelectiveRetrainResult:
        """Head-only L1 training, then retraining of the units reachable from the head.

        Returns the validation accuracy, the parameter mask of the sub-network
        and its hidden units. With no reachable unit the stage-1 accuracy is
        returned with an empty mask.
        """
        net = self._require_net()
        task_id = task.spec.task_id
        if task_id not in net.heads:
            net.add_head(task_id, task.spec.out_dim)
        head_w, head_b = head_param_name(task_id, "weights"), head_param_name(task_id, "bias")
        params = net.parameters()

        head_only = {head_w: np.ones(params[head_w].shape, dtype=bool),
                     head_b: np.ones(params[head_b].shape, dtype=bool)}
        reg = RegularizerSpec.l1(self.config.mu, scope=(head_w,)) if self.config.mu > 0 else None
        train(net, task, task_id, self.training, reg,
              iterations=self.config.selective_iterations, mask=head_only,
              stream=self._stream(task_id, PHASE_HEAD),
              history_path=self._history_path(task_id, "head"))
        stage1 = self._val_accuracy(task) or 0.0

        mask, units = self.reachable_subnetwork(task_id)
        if not units:
            logger.info("Task %d: head reaches no hidden unit, skipping sub-network retraining", task_id)
            return SelectiveRetrainResult(stage1, {}, (), stage1)

        train(net, task, task_id, self.training, None,
              iterations=self.config.selective_iterations, mask=mask,
              stream=self._stream(task_id, PHASE_SUBNET),
              history_path=self._history_path(task_id, "subnet"))
        val = self._val_accuracy(task) or 0.0
        logger.debug("Task %d: selective retraining over %d units, val %.4f", task_id, len(units), val)
        return SelectiveRetrainResult(val, mask, tuple(units), stage1)

    def reachable_subnetwork(self, task_id: int) -> tuple[dict[str, np.ndarray], list[NodeId]]:
        """Mask of the sub-network feeding the head through weights with |w| > REACH_EPS."""
        net = self._require_net()
        head = net.heads[task_id]
        reach = [np.zeros(w, dtype=bool) for w in net.widths]
        reach[-1] = np.any(np.abs(head.weights) > REACH_EPS, axis=0)
        for l in range(len(net.hidden) - 1, 0, -1):
            rows = net.hidden[l].weights[reach[l]]
            reach[l - 1] = np.any(np.abs(rows) > REACH_EPS, axis=0) if rows.size else reach[l - 1]

        units = [NodeId(l, int(j)) for l, r in enumerate(reach) for j in np.flatnonzero(r)]
        if not units:
            return {}, []
        mask = {}
        for l, layer in enumerate(net.hidden):
            cols = reach[l - 1] if l > 0 else np.ones(layer.in_dim, dtype=bool)
            mask[hidden_param_name(l, "weights")] = np.outer(reach[l], cols)
            mask[hidden_param_name(l, "bias")] = reach[l].copy()
        mask[head_param_name(task_id, "weights")] = np.broadcast_to(reach[-1], head.weights.shape).copy()
        mask[head_param_name(task_id, "bias")] = np.ones(head.bias.shape, dtype=bool)
        return mask, units

    def expansion_bar(self, task_id: int) -> float | None:
        earlier = [v for t, v in self.final_val.items() if t < task_id]
        if not earlier:
            return None
        return self.config.expansion_ratio * float(np.mean(earlier))

    def expand_if_needed(self, val_accuracy: float, task_id: int) -> list[NodeId]:
        """Add expansion_k units to every hidden layer when val_accuracy is below the bar."""
        net = self._require_net()
        bar = self.expansion_bar(task_id)
        if bar is None or val_accuracy >= bar:
            return []
        added = []
        for l in range(len(net.hidden)):
            added.extend(net.expand_layer(l, self.config.expansion_k, at_task=task_id))
        logger.info("Task %d: val %.4f below %.4f, expanded %d units", task_id, val_accuracy, bar, len(added))
        return added

    def estimate_candidate_weights(self, task: TaskDataset) -> WeightSnapshot:
        """Candidate W_i from an unfrozen copy trained on a subset of the task.

        The subset holds candidate_fraction of the train split but never
        fewer than one batch. The copy shares the task's full-training batch
        stream; the live network is not touched.
        """
        net = self._require_net()
        task_id = task.spec.task_id
        n = len(task.train)
        if n == 0:
            raise EmptyInputError(f"Task {task_id} has no training data")
        size = max(int(round(self.config.candidate_fraction * n)), min(self.training.batch_size, n))
        generator = rng.make_rng(self.seed, rng.CANDIDATE, task_id)
        idx = np.sort(generator.choice(n, size=size, replace=False))

        candidate = net.copy()
        candidate.unfreeze_all()
        train(candidate, task.train.subset(idx), task_id, self.training, None,
              iterations=self.config.candidate_iterations,
              stream=self._stream(task_id, PHASE_FULL),
              history_path=self._history_path(task_id, "candidate"))
        return take_snapshot(candidate, task_id)

    def evaluate_all(self, sequence: TaskSequence, upto: int) -> list[float]:
        """Test accuracy of every head 0..upto."""
        net = self._require_net()
        return [
            eval_accuracy(net, sequence[t].test.images, sequence[t].test.labels,
                          sequence[t].spec.task_id, self.training.eval_batch_size)
            for t in range(upto + 1)
        ]

    # ── Task drivers ──

    def run_task(self, task: TaskDataset) -> tuple[TaskRecord, DriftReport | None]:
        """Learn one task after the first; rolls back to W_{i-1} on any failure.

        The returned record carries no accuracy row yet (see evaluate_all).
        """
        net = self._require_net()
        prev = self.snapshot
        task_id = task.spec.task_id
        cfg = self.config
        record = TaskRecord(task_id=task_id, accuracy_row=[], widths=[])
        report = None
        try:
            if cfg.strategy == "naive":
                net.add_head(task_id, task.spec.out_dim)
                history = train(net, task, task_id, self.training, None,
                                stream=self._stream(task_id, PHASE_FULL),
                                history_path=self._history_path(task_id, "full"))
            else:
                net.add_head(task_id, task.spec.out_dim)
                if cfg.enable_selective_retrain:
                    sel_val = self.selective_retrain(task).val_accuracy
                else:
                    sel_val = self._val_accuracy(task) or 0.0
                record.selective_val_accuracy = sel_val
                if cfg.enable_expansion:
                    record.expanded = self.expand_if_needed(sel_val, task_id)
                net.revert_to(prev)

                candidate = self.estimate_candidate_weights(task)
                report = compute_drift(prev, candidate, cfg.drift_policy)
                if self.drift_dir:
                    self._export_drift(task_id, prev, candidate, report)
                record.drift_counts = report.counts()
                for entry in report.entries:
                    if entry.category == DUPLICATE and cfg.enable_duplication:
                        clone = net.duplicate_node(entry.node, at_task=task_id)
                        record.duplications.append(DuplicationEntry(task_id, entry.node, entry.rho, clone))
                    elif entry.category == FREEZE:
                        net.freeze(entry.node, at_task=task_id)

                reg = RegularizerSpec.anchor_l2(cfg.anchor_lambda, prev)
                history = train(net, task, task_id, self.training, reg,
                                stream=self._stream(task_id, PHASE_FULL),
                                history_path=self._history_path(task_id, "full"))
        except Exception:
            self.net = restore_network(prev)
            logger.error("Task %d failed, rolled back to the snapshot of task %d", task_id, prev.task)
            raise

        record.val_accuracy = self._record_val(task, history)
        record.widths = net.widths
        record.frozen_count = len(net.frozen_at)
        self.snapshot = take_snapshot(net, task_id)
        logger.info(
            "Task %d: widths %s, %d duplicated, %d frozen, %d expanded",
            task_id, record.widths, len(record.duplications), record.frozen_count, len(record.expanded),
        )
        return record, report

    def run_sequence(self, sequence: TaskSequence) -> SequenceResult:
        """Learn every task in order and fill one accuracy row per task.

        On failure the exception propagates and `self.result` keeps the
        rows of the tasks that completed.
        """
        if len(sequence) == 0:
            raise EmptyInputError("Cannot run an empty task sequence")
        self.result = SequenceResult()
        start = self._resume(sequence)
        for i in range(start, len(sequence)):
            task = sequence[i]
            began = time.perf_counter()
            logger.info("Task %d/%d (%s)", i + 1, len(sequence), task.spec.transform)
            if i == 0:
                self.train_first_task(task)
                record = TaskRecord(task_id=task.spec.task_id, accuracy_row=[], widths=self.net.widths,
                                    val_accuracy=self.final_val.get(task.spec.task_id))
            else:
                record, _ = self.run_task(task)
            record.accuracy_row = self.evaluate_all(sequence, i)
            record.seconds = time.perf_counter() - began
            logger.debug("Task %d took %.1fs", task.spec.task_id, record.seconds)
            self.result.records.append(record)
            self._checkpoint(record)
        self.result.complete = True
        return self.result

    # ── Checkpoints ──

    def fingerprint(self, sequence: TaskSequence) -> str:
        payload = {
            "config": dataclasses.asdict(self.config),
            "seed": self.seed,
            "dtype": self.dtype.name,
            "tasks": [t.spec.to_dict() for t in sequence],
            "sequence": dict(sequence.metadata),
        }
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def _paths(self, task_id: int) -> tuple[str, str]:
        base = os.path.join(self.checkpoint_dir, f"task-{task_id:03d}")
        return base + ".snapshot", base + ".json"

    def _checkpoint(self, record: TaskRecord) -> None:
        if not self.checkpoint_dir:
            return
        os.makedirs(self.checkpoint_dir, exist_ok=True)
        snap_path, record_path = self._paths(record.task_id)
        save_snapshot(self.snapshot, snap_path)
        payload = {
            "fingerprint": self._fingerprint,
            "record": record.to_dict(),
            "final_val": {str(t): v for t, v in self.final_val.items()},
        }
        tmp = record_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
        os.replace(tmp, record_path)

    def _resume(self, sequence: TaskSequence) -> int:
        """Index of the first task still to run, restoring state from checkpoints."""
        self._fingerprint = self.fingerprint(sequence)
        if not self.checkpoint_dir or not os.path.isdir(self.checkpoint_dir):
            return 0
        done = 0
        payload = None
        for i in range(len(sequence)):
            snap_path, record_path = self._paths(sequence[i].spec.task_id)
            if not (os.path.exists(snap_path) and os.path.exists(record_path)):
                break
            with open(record_path, "r", encoding="utf-8") as f:
                payload = json.load(f)
            if payload["fingerprint"] != self._fingerprint:
                raise ConsistencyError(
                    f"Checkpoint {record_path} belongs to a different configuration; use a fresh directory"
                )
            self.result.records.append(TaskRecord.from_dict(payload["record"]))
            done = i + 1
        if done:
            self.snapshot = load_snapshot(self._paths(sequence[done - 1].spec.task_id)[0])
            self.net = restore_network(self.snapshot)
            self.final_val = {int(t): float(v) for t, v in payload["final_val"].items()}
            logger.info("Resuming after task %d from %s", done - 1, self.checkpoint_dir)
        return done


def run_sequence(sequence: TaskSequence, config: ContinualConfig, seed: int = 0, **kwargs) -> SequenceResult:
    return ContinualLearner(config, seed=seed, **kwargs).run_sequence(sequence)
