"""
Training objectives

Data loss of a task head plus one of:
  - none
  - l1(mu):              mu · Σ|w| over weight matrices (first task)
  - anchor_l2(lambda, W): lambda · Σ(w − w_anchor)² over every parameter
                          entry that exists in the anchor snapshot

The L1 subgradient at exactly zero is zero. Entries created after the anchor
(new units, new heads) carry no anchor term.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ConsistencyError
from ..model.network import SIGMOID_BCE, SOFTMAX_CE, Network
from ..model.snapshot import WeightSnapshot

NONE = "none"
L1 = "l1"
ANCHOR_L2 = "anchor_l2"


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = NONE
    coefficient: float = 0.0
    anchor: WeightSnapshot | None = None
    # l1 only: parameter names to penalize; None means every weight matrix
    scope: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (NONE, L1, ANCHOR_L2):
            raise ConfigError(f"Unknown regularizer kind: {self.kind}", ["kind"])
        if self.coefficient < 0:
            raise ConfigError("Regularization coefficient must be >= 0", ["coefficient"])
        if self.kind == ANCHOR_L2 and self.anchor is None:
            raise ConfigError("anchor_l2 needs an anchor snapshot", ["anchor"])

    @classmethod
    def none(cls) -> "RegularizerSpec":
        return cls()

    @classmethod
    def l1(cls, mu: float, scope: tuple[str, ...] | None = None) -> "RegularizerSpec":
        return cls(kind=L1, coefficient=mu, scope=scope)

    @classmethod
    def anchor_l2(cls, lambda_coeff: float, anchor: WeightSnapshot) -> "RegularizerSpec":
        return cls(kind=ANCHOR_L2, coefficient=lambda_coeff, anchor=anchor)


def loss_kind_for(net: Network, task_id: int) -> str:
    head = net.heads[task_id]
    return SIGMOID_BCE if head.out_dim == 1 else SOFTMAX_CE


def l1_penalty(
    params: dict[str, np.ndarray],
    mu: float,
    scope: tuple[str, ...] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """mu · Σ|w| and its subgradient mu · sign(w)."""
    names = [n for n in params if n.endswith(".weights")] if scope is None else list(scope)
    value = 0.0
    grads = {}
    for name in names:
        w = params[name]
        value += float(np.abs(w).sum(dtype=np.float64))
        grads[name] = (mu * np.sign(w)).astype(w.dtype)
    return mu * value, grads


def anchor_penalty(
    params: dict[str, np.ndarray],
    anchor_params: dict[str, np.ndarray],
    lambda_coeff: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """lambda · Σ(w − a)² over anchored entries and its gradient 2·lambda·(w − a)."""
    value = 0.0
    grads = {}
    for name, anchor in anchor_params.items():
        if name not in params:
            raise ConsistencyError(f"Anchored parameter {name} missing from the network")
        w = params[name]
        if w.ndim != anchor.ndim or any(c < a for c, a in zip(w.shape, anchor.shape)):
            raise ConsistencyError(f"{name}: shape {w.shape} does not cover anchor shape {anchor.shape}")
        block = tuple(slice(0, n) for n in anchor.shape)
        diff = w[block].astype(np.float64) - anchor
        value += float(np.sum(diff * diff))
        grad = np.zeros_like(w)
        grad[block] = (2.0 * lambda_coeff * diff).astype(w.dtype)
        grads[name] = grad
    return lambda_coeff * value, grads


def penalty(net: Network, reg: RegularizerSpec) -> tuple[float, dict[str, np.ndarray]]:
    if reg.kind == NONE or reg.coefficient == 0.0:
        return 0.0, {}
    params = net.parameters()
    if reg.kind == L1:
        return l1_penalty(params, reg.coefficient, reg.scope)
    return anchor_penalty(params, reg.anchor.parameters(), reg.coefficient)


def total_loss(
    net: Network,
    batch: np.ndarray,
    labels: np.ndarray,
    task_id: int,
    reg: RegularizerSpec | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Data loss + penalty and the combined gradients (frozen entries zeroed)."""
    reg = reg or RegularizerSpec.none()
    logits, cache = net.forward(batch, task_id)
    loss, grads = net.backward(cache, labels, loss_kind_for(net, task_id))
    extra, extra_grads = penalty(net, reg)
    if extra_grads:
        masks = net.trainable_masks(task_id) if net.frozen_at else None
        for name, grad in extra_grads.items():
            if masks is not None:
                grad = grad * masks[name]
            grads[name] = grads[name] + grad if name in grads else grad
    return loss + extra, grads
