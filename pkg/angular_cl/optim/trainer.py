"""
Trainer

Shuffled mini-batch Adam on `total_loss` for a fixed iteration budget, with
periodic validation accuracy for reporting (no early stopping).

Features:
  - Deterministic batch order from (seed, stream) Philox streams
  - Optional extra mask restricting which parameter entries train
  - CSV history (iteration, loss, val_accuracy) when a path is given
  - Numeric failures abort with the last finite weights attached
"""

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..core import rng
from ..core.config_parser import TrainingConfig
from ..core.datasets import ImageSet, TaskDataset
from ..errors import EmptyInputError, NumericError, TrainingAborted
from ..model.network import Network
from ..model.snapshot import save_snapshot, take_snapshot
from .adam import AdamState, adam_step
from .objectives import RegularizerSpec, total_loss

logger = logging.getLogger("angular_cl.train")

HISTORY_COLUMNS = ["iteration", "loss", "val_accuracy"]


@dataclass
class TrainingHistory:
    """Per-iteration training loss and (iteration, accuracy) validation points."""

    losses: list[float] = field(default_factory=list)
    val_accuracy: list[tuple[int, float]] = field(default_factory=list)

    @property
    def final_val_accuracy(self) -> float | None:
        return self.val_accuracy[-1][1] if self.val_accuracy else None


def batch_indices(n: int, batch_size: int, iterations: int, seed: int, stream: int = 0) -> Iterator[np.ndarray]:
    """Yield `iterations` index batches, reshuffling at every pass over the data."""
    if n < 1:
        raise EmptyInputError("Cannot draw batches from an empty training set")
    generator = rng.make_rng(seed, rng.BATCHES, stream)
    size = min(batch_size, n)
    order = generator.permutation(n)
    pos = 0
    for _ in range(iterations):
        if pos + size > n:
            order = generator.permutation(n)
            pos = 0
        yield order[pos:pos + size]
        pos += size


def eval_accuracy(net: Network, images: np.ndarray, labels: np.ndarray, task_id: int, batch_size: int = 4096) -> float:
    """Fraction correct: argmax for multi-class heads, logit > 0 for single-logit heads."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise EmptyInputError("Accuracy over an empty set is undefined")
    correct = 0
    for start in range(0, n, batch_size):
        logits, _ = net.forward(images[start:start + batch_size], task_id)
        if logits.shape[1] == 1:
            predictions = (logits[:, 0] > 0).astype(np.int64)
        else:
            predictions = np.argmax(logits, axis=1)
        correct += int(np.sum(predictions == labels[start:start + batch_size]))
    return correct / n


def _combined_masks(net: Network, task_id: int, mask: dict[str, np.ndarray] | None) -> dict[str, np.ndarray]:
    base = net.trainable_masks(task_id)
    if mask is None:
        return base
    # parameters absent from an explicit mask do not train
    return {name: base[name] & m for name, m in mask.items() if name in base}


def train(
    net: Network,
    data: TaskDataset | ImageSet,
    task_id: int,
    config: TrainingConfig,
    reg: RegularizerSpec | None = None,
    iterations: int | None = None,
    mask: dict[str, np.ndarray] | None = None,
    stream: int = 0,
    val: ImageSet | None = None,
    history_path: str | None = None,
    checkpoint_path: str | None = None,
) -> TrainingHistory:
    """Run `iterations` (default config.iterations) Adam steps for one task head.

    `data` is a TaskDataset (its train split trains, its val split validates)
    or a bare ImageSet (validation only when `val` is given).
    """
    iterations = config.iterations if iterations is None else iterations
    if isinstance(data, TaskDataset):
        train_set, val = data.train, (val if val is not None else data.val)
    else:
        train_set = data
    history = TrainingHistory()
    if iterations <= 0:
        return history

    masks = _combined_masks(net, task_id, mask)
    state = AdamState()
    writer = None
    history_file = None
    if history_path:
        os.makedirs(os.path.dirname(os.path.abspath(history_path)), exist_ok=True)
        history_file = open(history_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(history_file)
        writer.writerow(HISTORY_COLUMNS)

    try:
        batches = batch_indices(len(train_set), config.batch_size, iterations, config.seed, stream)
        for it, idx in enumerate(batches, start=1):
            loss, grads = total_loss(net, train_set.images[idx], train_set.labels[idx], task_id, reg)
            if not np.isfinite(loss):
                raise NumericError(f"Non-finite loss at iteration {it}")
            grads = {name: g for name, g in grads.items() if name in masks}
            adam_step(net.parameters(), grads, state, config, masks)
            history.losses.append(loss)

            val_acc = None
            if val is not None and len(val) and it % config.eval_every == 0:
                val_acc = eval_accuracy(net, val.images, val.labels, task_id, config.eval_batch_size)
                history.val_accuracy.append((it, val_acc))
                logger.debug("task %d iter %d loss %.5f val_acc %.4f", task_id, it, loss, val_acc)
            if writer is not None:
                writer.writerow([it, repr(loss), "" if val_acc is None else repr(val_acc)])
    except NumericError as e:
        last_finite = take_snapshot(net, task_id)
        if checkpoint_path:
            save_snapshot(last_finite, checkpoint_path)
        logger.error("Training task %d aborted: %s", task_id, e)
        raise TrainingAborted(f"Training task {task_id} aborted: {e}", last_finite=last_finite, cause=e) from e
    finally:
        if history_file is not None:
            history_file.close()

    if val is not None and len(val) and (not history.val_accuracy or history.val_accuracy[-1][0] != iterations):
        history.val_accuracy.append(
            (iterations, eval_accuracy(net, val.images, val.labels, task_id, config.eval_batch_size))
        )
    return history
