"""
Drift metrics

Angular distance in degrees and two Minkowski-family distances between node
weight vectors. Row-wise variants compare whole layers at once.

Angular distance computes cos = w1·w2 / sqrt(|w1|²·|w2|²) in float64, clamps
it to [-1, 1] and returns arccos in degrees. Zero vectors never raise: two
zero vectors are 0° apart, one zero vector is `zero_vector_angle` (default
90°) from anything.
"""

import numpy as np

from ..errors import ConfigError, ConsistencyError, NumericError

ANGULAR = "angular"
EUCLIDEAN_SQ = "euclidean_sq"
MANHATTAN = "manhattan"


def _pair(w1, w2) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(w1, dtype=np.float64)
    b = np.asarray(w2, dtype=np.float64)
    if a.shape != b.shape:
        raise ConsistencyError(f"Vector shapes differ: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("Non-finite entries in drift vectors")
    return a, b


# ── Row-wise (layer) metrics ──────────────────────────────────


def angular_rows(a: np.ndarray, b: np.ndarray, zero_vector_angle: float = 90.0) -> np.ndarray:
    """Angular distance in degrees between corresponding rows of a and b."""
    a, b = _pair(a, b)
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    dot = np.einsum("ij,ij->i", a, b)
    sq_a = np.einsum("ij,ij->i", a, a)
    sq_b = np.einsum("ij,ij->i", b, b)
    denom = np.sqrt(sq_a * sq_b)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 1.0)
    degrees = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    zero_a, zero_b = sq_a == 0, sq_b == 0
    degrees = np.where(zero_a & zero_b, 0.0, degrees)
    degrees = np.where(zero_a ^ zero_b, zero_vector_angle, degrees)
    return degrees


def euclidean_sq_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _pair(a, b)
    diff = np.atleast_2d(a - b)
    return np.einsum("ij,ij->i", diff, diff)


def manhattan_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _pair(a, b)
    return np.abs(np.atleast_2d(a - b)).sum(axis=1)


def metric_rows(metric: str, a: np.ndarray, b: np.ndarray, zero_vector_angle: float = 90.0) -> np.ndarray:
    if metric == ANGULAR:
        return angular_rows(a, b, zero_vector_angle)
    if metric == EUCLIDEAN_SQ:
        return euclidean_sq_rows(a, b)
    if metric == MANHATTAN:
        return manhattan_rows(a, b)
    raise ConfigError(f"Unknown drift metric: {metric}", ["metric"])


# ── Single-vector metrics ─────────────────────────────────────


def _vectors(w1, w2) -> tuple[np.ndarray, np.ndarray]:
    a, b = _pair(w1, w2)
    if a.ndim != 1:
        raise ConsistencyError(f"Expected 1-D vectors, got shape {a.shape}")
    return a, b


def angular_distance_deg(w1, w2, zero_vector_angle: float = 90.0) -> float:
    """arccos(w1·w2 / (|w1||w2|)) in degrees, in [0, 180]."""
    a, b = _vectors(w1, w2)
    return float(angular_rows(a[None, :], b[None, :], zero_vector_angle)[0])


def euclidean_sq_distance(w1, w2) -> float:
    """Σ (w1 − w2)²."""
    a, b = _vectors(w1, w2)
    return float(euclidean_sq_rows(a[None, :], b[None, :])[0])


def manhattan_distance(w1, w2) -> float:
    """Σ |w1 − w2|."""
    a, b = _vectors(w1, w2)
    return float(manhattan_rows(a[None, :], b[None, :])[0])
