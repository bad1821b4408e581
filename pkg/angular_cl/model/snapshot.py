"""
Weight Snapshots

Immutable deep copies of a network after a task (W_i), with the
architecture metadata needed to rebuild it: widths, unit creation times,
lineage, frozen set and head tags. Snapshots serialize to the binary
container format bit-exactly.
"""

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from ..core.container import read_container, write_container
from .network import LayerParams, Lineage, Network, NodeId, head_param_name, hidden_param_name

SNAPSHOT_KIND = "weight-snapshot"


def _frozen_layer(layer: LayerParams) -> LayerParams:
    weights, bias = layer.weights.copy(), layer.bias.copy()
    weights.setflags(write=False)
    bias.setflags(write=False)
    return LayerParams(weights, bias)


@dataclass(frozen=True)
class WeightSnapshot:
    task: int
    input_dim: int
    hidden: tuple[LayerParams, ...]
    heads: Mapping[int, LayerParams]
    head_created: Mapping[int, int]
    frozen_at: Mapping[NodeId, int]
    lineage: Mapping[NodeId, Lineage]
    created_at: tuple[np.ndarray, ...]
    seed: int = 0
    dtype: str = "float32"
    surgery_count: int = 0
    metadata: Mapping[str, object] = field(default_factory=dict)

    @property
    def widths(self) -> list[int]:
        return [layer.out_dim for layer in self.hidden]

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for l, layer in enumerate(self.hidden):
            params[hidden_param_name(l, "weights")] = layer.weights
            params[hidden_param_name(l, "bias")] = layer.bias
        for task_id in sorted(self.heads):
            params[head_param_name(task_id, "weights")] = self.heads[task_id].weights
            params[head_param_name(task_id, "bias")] = self.heads[task_id].bias
        return params


def take_snapshot(net: Network, task: int) -> WeightSnapshot:
    """Deep, read-only copy of the network tagged with `task`."""
    created = []
    for c in net.created_at:
        c = c.copy()
        c.setflags(write=False)
        created.append(c)
    return WeightSnapshot(
        task=task,
        input_dim=net.input_dim,
        hidden=tuple(_frozen_layer(layer) for layer in net.hidden),
        heads=MappingProxyType({t: _frozen_layer(h) for t, h in net.heads.items()}),
        head_created=MappingProxyType(dict(net.head_created)),
        frozen_at=MappingProxyType(dict(net.frozen_at)),
        lineage=MappingProxyType(dict(net.lineage)),
        created_at=tuple(created),
        seed=net.seed,
        dtype=net.dtype.name,
        surgery_count=net.surgery_count,
    )


def restore_network(snapshot: WeightSnapshot) -> Network:
    """Rebuild a live, writable network from a snapshot."""
    net = Network(
        snapshot.input_dim,
        [LayerParams(l.weights.copy(), l.bias.copy()) for l in snapshot.hidden],
        seed=snapshot.seed,
        dtype=np.dtype(snapshot.dtype),
    )
    net.heads = {t: LayerParams(h.weights.copy(), h.bias.copy()) for t, h in snapshot.heads.items()}
    net.head_created = dict(snapshot.head_created)
    net.frozen_at = dict(snapshot.frozen_at)
    net.lineage = dict(snapshot.lineage)
    net.created_at = [c.copy() for c in snapshot.created_at]
    net.surgery_count = snapshot.surgery_count
    return net


# ── Serialization ─────────────────────────────────────────────


def save_snapshot(snapshot: WeightSnapshot, path: str) -> str:
    """Write a snapshot container; returns the payload hash."""
    arrays = dict(snapshot.parameters())
    for l, created in enumerate(snapshot.created_at):
        arrays[f"created_at.{l}"] = created
    metadata = {
        "task": snapshot.task,
        "input_dim": snapshot.input_dim,
        "num_hidden": len(snapshot.hidden),
        "heads": sorted(snapshot.heads),
        "head_created": [[t, c] for t, c in sorted(snapshot.head_created.items())],
        "frozen": [[n.layer, n.unit, t] for n, t in sorted(snapshot.frozen_at.items())],
        "lineage": [
            [n.layer, n.unit,
             None if lin.origin is None else lin.origin.layer,
             None if lin.origin is None else lin.origin.unit,
             lin.created_at]
            for n, lin in sorted(snapshot.lineage.items())
        ],
        "seed": snapshot.seed,
        "dtype": snapshot.dtype,
        "surgery_count": snapshot.surgery_count,
        "extra": dict(snapshot.metadata),
    }
    return write_container(path, arrays, metadata, kind=SNAPSHOT_KIND)


def load_snapshot(path: str) -> WeightSnapshot:
    arrays, meta = read_container(path, kind=SNAPSHOT_KIND)

    def _layer(prefix: str) -> LayerParams:
        return _frozen_layer(LayerParams(arrays[f"{prefix}.weights"], arrays[f"{prefix}.bias"]))

    hidden = tuple(_layer(f"hidden.{l}") for l in range(meta["num_hidden"]))
    heads = {int(t): _layer(f"head.{t}") for t in meta["heads"]}
    lineage = {}
    for layer, unit, o_layer, o_unit, created in meta["lineage"]:
        origin = None if o_layer is None else NodeId(o_layer, o_unit)
        lineage[NodeId(layer, unit)] = Lineage(origin=origin, created_at=created)
    created_at = []
    for l in range(meta["num_hidden"]):
        c = arrays[f"created_at.{l}"]
        c.setflags(write=False)
        created_at.append(c)
    return WeightSnapshot(
        task=meta["task"],
        input_dim=meta["input_dim"],
        hidden=hidden,
        heads=MappingProxyType(heads),
        head_created=MappingProxyType({int(t): int(c) for t, c in meta["head_created"]}),
        frozen_at=MappingProxyType({NodeId(l, u): t for l, u, t in meta["frozen"]}),
        lineage=MappingProxyType(lineage),
        created_at=tuple(created_at),
        seed=meta["seed"],
        dtype=meta["dtype"],
        surgery_count=meta["surgery_count"],
        metadata=MappingProxyType(meta.get("extra", {})),
    )
