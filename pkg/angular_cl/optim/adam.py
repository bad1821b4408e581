"""
Adam Optimizer

Bias-corrected Adam over named numpy parameters with optional boolean
masks. Masked-out entries are neither updated nor have their moments
advanced. Moment tensors grow with the parameters after surgery; the new
rows/columns start at zero.
"""

from dataclasses import dataclass, field

import numpy as np

from ..core.config_parser import TrainingConfig
from ..errors import NumericError


@dataclass
class AdamState:
    """First/second moments per parameter name and the shared timestep."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def moments_for(self, name: str, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Moments shaped like `like`, zero-padding any region added by surgery."""
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        elif self.m[name].shape != like.shape:
            self.m[name] = _pad_to(self.m[name], like.shape)
            self.v[name] = _pad_to(self.v[name], like.shape)
        return self.m[name], self.v[name]


def _pad_to(array: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape, dtype=array.dtype)
    out[tuple(slice(0, n) for n in array.shape)] = array
    return out


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainingConfig,
    masks: dict[str, np.ndarray] | None = None,
) -> AdamState:
    """One in-place Adam update of every parameter that has a gradient.

    Raises NumericError naming the first non-finite gradient before touching
    any parameter.
    """
    for name, grad in grads.items():
        if name not in params:
            continue
        if grad.shape != params[name].shape:
            raise NumericError(f"Gradient shape {grad.shape} != parameter shape {params[name].shape}", name)
        if not np.all(np.isfinite(grad)):
            raise NumericError("Non-finite gradient", name)

    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    step_size = config.learning_rate / bc1

    for name, grad in grads.items():
        if name not in params:
            continue
        param = params[name]
        m, v = state.moments_for(name, param)
        mask = None if masks is None else masks.get(name)
        if mask is not None:
            if not mask.any():
                continue
            if mask.all():
                mask = None

        m_new = b1 * m + (1.0 - b1) * grad
        v_new = b2 * v + (1.0 - b2) * (grad * grad)
        update = step_size * m_new / (np.sqrt(v_new / bc2) + config.adam_eps)
        if mask is None:
            m[...] = m_new
            v[...] = v_new
            param -= update.astype(param.dtype)
        else:
            m[mask] = m_new[mask]
            v[mask] = v_new[mask]
            param[mask] -= update[mask].astype(param.dtype)
    return state
