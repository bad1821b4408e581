"""
Dense Network

Fully connected ReLU network with one output head per task, exact
hand-derived backpropagation for softmax cross-entropy and sigmoid binary
cross-entropy, and node surgery (duplicate, expand, freeze).

Parameters are float32 by default; reductions (losses, bias gradients)
accumulate in float64.

Freezing a hidden node at task t pins its incoming weights and bias, and its
outgoing weights into units / heads created at or before t. Nodes are frozen
before task t trains, so while task t itself trains its connections into
units and heads created at t stay open; every later task sees them pinned.
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from ..core import rng
from ..errors import (
    ConfigError,
    ConsistencyError,
    HeadConflictError,
    NumericError,
    StaleNodeError,
    UnknownTaskError,
    UnsupportedOperationError,
)

logger = logging.getLogger("angular_cl.network")

SOFTMAX_CE = "softmax-ce"
SIGMOID_BCE = "sigmoid-bce"
LOSS_KINDS = (SOFTMAX_CE, SIGMOID_BCE)


# ── Types ─────────────────────────────────────────────────────


@dataclass(frozen=True, order=True)
class NodeId:
    """A hidden unit: layer index and row within that layer."""

    layer: int
    unit: int

    def __str__(self) -> str:
        return f"{self.layer}:{self.unit}"


@dataclass
class LayerParams:
    """weights: out_dim × in_dim, bias: out_dim."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def out_dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[1])

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy())


@dataclass(frozen=True)
class Lineage:
    """Where a surgically created node came from. origin is None for expansion units."""

    origin: NodeId | None
    created_at: int


@dataclass
class ForwardCache:
    task_id: int
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    logits: np.ndarray


def he_normal(generator: np.random.Generator, out_dim: int, in_dim: int, dtype) -> np.ndarray:
    return (generator.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)).astype(dtype)


def hidden_param_name(layer: int, part: str) -> str:
    return f"hidden.{layer}.{part}"


def head_param_name(task_id: int, part: str) -> str:
    return f"head.{task_id}.{part}"


# ── Losses ────────────────────────────────────────────────────


def loss_and_dlogits(logits: np.ndarray, labels: np.ndarray, loss_kind: str) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    if labels.shape[0] != n:
        raise ConsistencyError(f"{labels.shape[0]} labels for {n} logit rows")
    z = logits.astype(np.float64)
    if loss_kind == SOFTMAX_CE:
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        rows = np.arange(n)
        loss = float(np.mean(lse - z[rows, labels]))
        probs = np.exp(z - lse[:, None])
        probs[rows, labels] -= 1.0
        dlogits = probs / n
    elif loss_kind == SIGMOID_BCE:
        if z.shape[1] != 1:
            raise ConsistencyError(f"Sigmoid loss needs a single logit column, got {z.shape[1]}")
        y = labels.astype(np.float64).reshape(-1, 1)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        sigmoid = 0.5 * (1.0 + np.tanh(0.5 * z))
        dlogits = (sigmoid - y) / n
    else:
        raise ConfigError(f"Unknown loss kind: {loss_kind}", ["loss_kind"])
    return loss, dlogits.astype(logits.dtype)


# ── Network ───────────────────────────────────────────────────


class Network:
    """ReLU MLP body shared by per-task output heads."""

    def __init__(
        self,
        input_dim: int,
        hidden: list[LayerParams],
        seed: int = 0,
        dtype=np.float32,
    ):
        self.input_dim = int(input_dim)
        self.hidden = hidden
        self.heads: dict[int, LayerParams] = {}
        self.head_created: dict[int, int] = {}
        self.frozen_at: dict[NodeId, int] = {}
        self.lineage: dict[NodeId, Lineage] = {}
        self.created_at: list[np.ndarray] = [np.zeros(layer.out_dim, dtype=np.int64) for layer in hidden]
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.surgery_count = 0
        self._masks: tuple[int | None, dict[str, np.ndarray]] | None = None

    # ── Introspection ──

    @property
    def widths(self) -> list[int]:
        return [layer.out_dim for layer in self.hidden]

    @property
    def frozen(self) -> frozenset[NodeId]:
        return frozenset(self.frozen_at)

    def hidden_nodes(self) -> list[NodeId]:
        return [NodeId(l, j) for l, layer in enumerate(self.hidden) for j in range(layer.out_dim)]

    def check_node(self, node: NodeId) -> None:
        if node.layer >= len(self.hidden) or node.layer < 0:
            raise UnsupportedOperationError(f"Node {node} is not a hidden node (output heads cannot be used)")
        if not 0 <= node.unit < self.hidden[node.layer].out_dim:
            raise StaleNodeError(f"Node {node} does not exist (layer width {self.hidden[node.layer].out_dim})")

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays by name (updates in place modify the network)."""
        params = {}
        for l, layer in enumerate(self.hidden):
            params[hidden_param_name(l, "weights")] = layer.weights
            params[hidden_param_name(l, "bias")] = layer.bias
        for task_id in sorted(self.heads):
            params[head_param_name(task_id, "weights")] = self.heads[task_id].weights
            params[head_param_name(task_id, "bias")] = self.heads[task_id].bias
        return params

    def copy(self) -> "Network":
        clone = Network(self.input_dim, [layer.copy() for layer in self.hidden], self.seed, self.dtype)
        clone.heads = {t: head.copy() for t, head in self.heads.items()}
        clone.head_created = dict(self.head_created)
        clone.frozen_at = dict(self.frozen_at)
        clone.lineage = dict(self.lineage)
        clone.created_at = [c.copy() for c in self.created_at]
        clone.surgery_count = self.surgery_count
        return clone

    def digest(self) -> str:
        """SHA-256 over every parameter's bytes, in name order."""
        h = hashlib.sha256()
        for name, array in self.parameters().items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(array).tobytes())
        return h.hexdigest()

    # ── Forward / backward ──

    def forward(self, batch: np.ndarray, task_id: int) -> tuple[np.ndarray, ForwardCache]:
        """Logits of the task's head and the activation cache for backward."""
        if task_id not in self.heads:
            raise UnknownTaskError(f"No output head for task {task_id}")
        x = np.asarray(batch, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConsistencyError(f"Batch must be n × {self.input_dim}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("Non-finite values in input batch")

        pre, post = [], []
        a = x
        for layer in self.hidden:
            z = a @ layer.weights.T + layer.bias
            a = np.maximum(z, 0)
            pre.append(z)
            post.append(a)
        head = self.heads[task_id]
        logits = a @ head.weights.T + head.bias
        return logits, ForwardCache(task_id, x, pre, post, logits)

    def backward(self, cache: ForwardCache, labels: np.ndarray, loss_kind: str) -> tuple[float, dict[str, np.ndarray]]:
        """Mean data loss and exact gradients of every parameter on the forward path.

        Gradients of frozen nodes' pinned parameters are zeroed.
        """
        if cache.task_id not in self.heads:
            raise UnknownTaskError(f"No output head for task {cache.task_id}")
        head = self.heads[cache.task_id]
        if cache.post[-1].shape[1] != head.in_dim or len(cache.pre) != len(self.hidden):
            raise ConsistencyError("Forward cache does not match the current architecture")

        loss, dz = loss_and_dlogits(cache.logits, labels, loss_kind)
        grads: dict[str, np.ndarray] = {
            head_param_name(cache.task_id, "weights"): dz.T @ cache.post[-1],
            head_param_name(cache.task_id, "bias"): dz.sum(axis=0, dtype=np.float64).astype(self.dtype),
        }
        da = dz @ head.weights
        for l in range(len(self.hidden) - 1, -1, -1):
            dz = da * (cache.pre[l] > 0)
            prev = cache.post[l - 1] if l > 0 else cache.inputs
            grads[hidden_param_name(l, "weights")] = dz.T @ prev
            grads[hidden_param_name(l, "bias")] = dz.sum(axis=0, dtype=np.float64).astype(self.dtype)
            if l > 0:
                da = dz @ self.hidden[l].weights

        if self.frozen_at:
            masks = self.trainable_masks(cache.task_id)
            for name, grad in grads.items():
                grad *= masks[name]
        return loss, grads

    def trainable_masks(self, task_id: int | None = None) -> dict[str, np.ndarray]:
        """Boolean mask per parameter: True where updates are allowed.

        `task_id` is the task being trained. A node frozen at task f pins its
        outgoing weights into units and heads created at or before f, except
        while task f itself trains, when connections into units and heads
        created at f stay open. None means training has moved past every freeze.
        """
        if self._masks is not None and self._masks[0] == task_id:
            return self._masks[1]
        masks = {name: np.ones(array.shape, dtype=bool) for name, array in self.parameters().items()}
        last = len(self.hidden) - 1
        for node, frozen_task in self.frozen_at.items():
            l, j = node.layer, node.unit
            masks[hidden_param_name(l, "weights")][j, :] = False
            masks[hidden_param_name(l, "bias")][j] = False

            open_same_task = task_id is not None and task_id <= frozen_task
            if l < last:
                created = self.created_at[l + 1]
                pinned = created < frozen_task if open_same_task else created <= frozen_task
                masks[hidden_param_name(l + 1, "weights")][pinned, j] = False
            else:
                for head_id, created in self.head_created.items():
                    if created < frozen_task or (created == frozen_task and not open_same_task):
                        masks[head_param_name(head_id, "weights")][:, j] = False
        self._masks = (task_id, masks)
        return masks

    # ── Surgery ──

    def freeze(self, node: NodeId, at_task: int) -> None:
        self.check_node(node)
        self._masks = None
        self.frozen_at[node] = max(self.frozen_at.get(node, at_task), at_task)

    def unfreeze_all(self) -> None:
        self._masks = None
        self.frozen_at = {}

    def _append_units(self, layer: int, rows: np.ndarray, bias: np.ndarray, at_task: int) -> list[NodeId]:
        self._masks = None
        target = self.hidden[layer]
        start = target.out_dim
        k = rows.shape[0]
        target.weights = np.vstack([target.weights, rows.astype(self.dtype)])
        target.bias = np.concatenate([target.bias, bias.astype(self.dtype)])
        if layer + 1 < len(self.hidden):
            nxt = self.hidden[layer + 1]
            nxt.weights = np.hstack([nxt.weights, np.zeros((nxt.out_dim, k), dtype=self.dtype)])
        else:
            for head in self.heads.values():
                head.weights = np.hstack([head.weights, np.zeros((head.out_dim, k), dtype=self.dtype)])
        self.created_at[layer] = np.concatenate([self.created_at[layer], np.full(k, at_task, dtype=np.int64)])
        return [NodeId(layer, start + i) for i in range(k)]

    def duplicate_node(self, node: NodeId, at_task: int) -> NodeId:
        """Clone a hidden node; the clone's outgoing weights start at zero and the original is frozen."""
        self.check_node(node)
        source = self.hidden[node.layer]
        (clone,) = self._append_units(
            node.layer,
            source.weights[node.unit: node.unit + 1].copy(),
            source.bias[node.unit: node.unit + 1].copy(),
            at_task,
        )
        self.lineage[clone] = Lineage(origin=node, created_at=at_task)
        self.freeze(node, at_task)
        logger.debug("Duplicated node %s as %s at task %d", node, clone, at_task)
        return clone

    def expand_layer(self, layer: int, k: int, at_task: int = 0) -> list[NodeId]:
        """Append k He-initialized units with zero outgoing weights."""
        if k < 1:
            raise ConfigError(f"Expansion count must be >= 1, got {k}", ["K"])
        if not 0 <= layer < len(self.hidden):
            raise StaleNodeError(f"Hidden layer {layer} does not exist")
        in_dim = self.hidden[layer].in_dim
        generator = rng.make_rng(self.seed, rng.EXPANSION, self.surgery_count)
        self.surgery_count += 1
        rows = he_normal(generator, k, in_dim, self.dtype)
        added = self._append_units(layer, rows, np.zeros(k, dtype=self.dtype), at_task)
        for node in added:
            self.lineage[node] = Lineage(origin=None, created_at=at_task)
        logger.debug("Expanded layer %d by %d units at task %d", layer, k, at_task)
        return added

    def add_head(self, task_id: int, out_dim: int, created_at: int | None = None) -> None:
        """New output head over the current last hidden width."""
        if task_id in self.heads:
            raise HeadConflictError(f"Head for task {task_id} already exists")
        if out_dim < 1:
            raise ConfigError(f"Head width must be >= 1, got {out_dim}", ["out_dim"])
        in_dim = self.hidden[-1].out_dim
        generator = rng.make_rng(self.seed, rng.INIT, 1, task_id)
        self.heads[task_id] = LayerParams(
            he_normal(generator, out_dim, in_dim, self.dtype),
            np.zeros(out_dim, dtype=self.dtype),
        )
        self.head_created[task_id] = task_id if created_at is None else created_at
        self._masks = None

    def revert_to(self, snapshot) -> None:
        """Reset every parameter entry that exists in `snapshot` to the snapshot value.

        Entries added since (new rows, columns or heads) are left as they are.
        """
        current = self.parameters()
        for name, old in snapshot.parameters().items():
            if name not in current:
                continue
            block = tuple(slice(0, n) for n in old.shape)
            if any(c < o for c, o in zip(current[name].shape, old.shape)):
                raise ConsistencyError(f"{name} shrank since the snapshot")
            current[name][block] = old


# ── Construction ──────────────────────────────────────────────


def init_network(arch: list[int], seed: int = 0, input_dim: int = 784, dtype=np.float32) -> Network:
    """He-initialized body (std sqrt(2/in_dim)), zero biases, no heads."""
    if not arch or any(int(w) < 1 for w in arch):
        raise ConfigError(f"Every layer width must be >= 1, got {arch}", ["arch"])
    hidden = []
    in_dim = input_dim
    for l, width in enumerate(arch):
        generator = rng.make_rng(seed, rng.INIT, 0, l)
        hidden.append(LayerParams(he_normal(generator, int(width), in_dim, dtype), np.zeros(int(width), dtype=dtype)))
        in_dim = int(width)
    return Network(input_dim, hidden, seed=seed, dtype=dtype)


def forward(net: Network, batch: np.ndarray, task_id: int) -> tuple[np.ndarray, ForwardCache]:
    return net.forward(batch, task_id)


def backward(net: Network, cache: ForwardCache, labels: np.ndarray, loss_kind: str) -> dict[str, np.ndarray]:
    return net.backward(cache, labels, loss_kind)[1]


def node_vector(source, node: NodeId) -> np.ndarray:
    """Incoming weight row of a hidden node (bias excluded), from a Network or WeightSnapshot."""
    hidden = source.hidden
    if not 0 <= node.layer < len(hidden):
        raise StaleNodeError(f"Hidden layer {node.layer} does not exist")
    weights = hidden[node.layer].weights
    if not 0 <= node.unit < weights.shape[0]:
        raise StaleNodeError(f"Node {node} does not exist (layer width {weights.shape[0]})")
    return weights[node.unit].copy()
