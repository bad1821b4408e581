"""
Task Sequence Builder

Derives continual-learning task sequences from a base image set:
  - permuted sequences: task 0 is the untransformed data, every later task
    applies a fresh seeded pixel permutation
  - rotated sequences: one seeded angle per task and a one-vs-rest objective
    whose target class is the task index (mod 10)

Train/val splits are drawn by shuffling the training pool with the sequence
seed (or by k-fold assignment); the same source indices are used for every
task. Construction is a pure function of (base data, config, seed, fold).
"""

import logging

import numpy as np

from ..errors import CapacityError, ConsistencyError, FoldIndexError
from . import rng
from .config_parser import SequenceConfig
from .datasets import (
    IDENTITY,
    IMAGE_SIDE,
    INPUT_DIM,
    MULTICLASS,
    NUM_CLASSES,
    ONE_VS_REST,
    PERMUTE,
    ROTATE,
    ImageSet,
    TaskDataset,
    TaskSequence,
    TaskSpec,
)

logger = logging.getLogger("angular_cl.sequence")

ROTATION_CENTER = (IMAGE_SIDE - 1) / 2.0  # 13.5


# ── Transforms ────────────────────────────────────────────────


def make_permutation(seed: int) -> np.ndarray:
    """Seeded bijection on 0..783 (Philox stream, see core.rng)."""
    return rng.make_rng(seed, rng.PERMUTATION).permutation(INPUT_DIM)


def _bilinear_plan(angle: float):
    """Source indices and weights for rotating a 28×28 grid by `angle` degrees."""
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    rows, cols = np.meshgrid(np.arange(IMAGE_SIDE), np.arange(IMAGE_SIDE), indexing="ij")
    dy = rows.ravel() - ROTATION_CENTER
    dx = cols.ravel() - ROTATION_CENTER
    # inverse mapping: output pixel samples the input at R(-angle) · offset
    src_x = cos * dx + sin * dy + ROTATION_CENTER
    src_y = -sin * dx + cos * dy + ROTATION_CENTER
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    indices, weights = [], []
    for oy, ox, w in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy, xx = y0 + oy, x0 + ox
        inside = (yy >= 0) & (yy < IMAGE_SIDE) & (xx >= 0) & (xx < IMAGE_SIDE)
        indices.append(np.where(inside, yy * IMAGE_SIDE + xx, 0))
        weights.append(np.where(inside, w, 0.0))
    return indices, weights


def rotate_images(images: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a batch of flattened 28×28 images (n × 784) about (13.5, 13.5).

    Bilinear interpolation, zero outside the source grid, output clamped to [0, 1].
    """
    if not 0.0 <= angle < 360.0:
        raise ValueError(f"Rotation angle must be in [0, 360), got {angle}")
    images = np.asarray(images, dtype=np.float32)
    flat = images.reshape(-1, INPUT_DIM).astype(np.float64)
    indices, weights = _bilinear_plan(angle)
    out = np.zeros_like(flat)
    for idx, w in zip(indices, weights):
        out += flat[:, idx] * w
    return np.clip(out, 0.0, 1.0).astype(np.float32).reshape(images.shape)


def rotate_image(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate one 28×28 image by `angle` degrees."""
    image = np.asarray(image, dtype=np.float32)
    if image.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ConsistencyError(f"Expected a {IMAGE_SIDE}×{IMAGE_SIDE} image, got {image.shape}")
    return rotate_images(image.reshape(1, INPUT_DIM), angle).reshape(IMAGE_SIDE, IMAGE_SIDE)


def relabel_one_vs_rest(labels: np.ndarray, target_class: int) -> np.ndarray:
    return (np.asarray(labels) == target_class).astype(np.int64)


def transform_images(spec: TaskSpec, images: np.ndarray) -> np.ndarray:
    """Apply a task's input transform to n × 784 images."""
    if spec.transform == IDENTITY:
        return np.asarray(images, dtype=np.float32)
    if spec.transform == PERMUTE:
        return np.asarray(images, dtype=np.float32)[:, make_permutation(spec.seed)]
    return rotate_images(images, spec.angle)


def transform_labels(spec: TaskSpec, labels: np.ndarray) -> np.ndarray:
    if spec.objective == ONE_VS_REST:
        return relabel_one_vs_rest(labels, spec.target_class)
    return np.asarray(labels, dtype=np.int64)


# ── Task specs ────────────────────────────────────────────────


def make_task_specs(config: SequenceConfig, seed: int | None = None) -> list[TaskSpec]:
    """Seeded task descriptions for the configured sequence."""
    seed = config.seed if seed is None else seed
    specs = []
    for task_id in range(config.num_tasks):
        if config.rotated:
            angle = float(rng.make_rng(seed, rng.ROTATION, task_id).uniform(0.0, 360.0))
            specs.append(
                TaskSpec(
                    task_id=task_id,
                    transform=ROTATE,
                    angle=angle % 360.0,
                    objective=ONE_VS_REST,
                    target_class=task_id % NUM_CLASSES,
                )
            )
        elif task_id == 0:
            specs.append(TaskSpec(task_id=0, transform=IDENTITY, objective=MULTICLASS))
        else:
            task_seed = int(rng.make_rng(seed, rng.PERMUTATION, task_id).integers(0, 2**63 - 1))
            specs.append(TaskSpec(task_id=task_id, transform=PERMUTE, seed=task_seed))
    _check_distinct_permutations(specs)
    return specs


def _check_distinct_permutations(specs: list[TaskSpec]) -> None:
    seen: dict[bytes, int] = {np.arange(INPUT_DIM).tobytes(): -1}
    for spec in specs:
        if spec.transform != PERMUTE:
            continue
        key = make_permutation(spec.seed).tobytes()
        if key in seen:
            raise ConsistencyError(
                f"Task {spec.task_id} permutation repeats task {seen[key]}; choose another sequence seed"
            )
        seen[key] = spec.task_id


# ── Splits ────────────────────────────────────────────────────


def kfold_indices(n: int, k: int, fold: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train, heldout) index arrays of fold `fold` out of `k` over n items."""
    if k < 2:
        raise FoldIndexError(f"k-fold needs k >= 2, got {k}")
    if not 0 <= fold < k:
        raise FoldIndexError(f"Fold {fold} out of range for k={k}")
    order = rng.make_rng(seed, rng.FOLDS).permutation(n)
    segments = np.array_split(order, k)
    heldout = segments[fold]
    train = np.concatenate([s for i, s in enumerate(segments) if i != fold])
    return train, heldout


def kfold_split(pool: ImageSet, k: int, fold: int, seed: int) -> tuple[ImageSet, ImageSet]:
    """Split a pool into (train, heldout) for one fold; folds partition the pool."""
    train, heldout = kfold_indices(len(pool), k, fold, seed)
    return pool.subset(train), pool.subset(heldout)


def split_indices(
    n_pool: int,
    config: SequenceConfig,
    seed: int,
    fold: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Train and validation indices into the training pool.

    Without a fold the pool is shuffled and cut into train_size / val_size.
    With fold=(k, f) the heldout segment serves as validation; both parts are
    truncated to the configured sizes.
    """
    if fold is None:
        needed = config.train_size + config.val_size
        if needed > n_pool:
            raise CapacityError(
                f"Requested {config.train_size} train + {config.val_size} val exceeds pool of {n_pool}"
            )
        order = rng.make_rng(seed, rng.SPLIT).permutation(n_pool)
        return order[: config.train_size], order[config.train_size:needed]

    k, f = fold
    train, heldout = kfold_indices(n_pool, k, f, seed)
    if config.train_size > len(train):
        raise CapacityError(
            f"Requested {config.train_size} train exceeds fold training part of {len(train)}"
        )
    return train[: config.train_size], heldout[: config.val_size]


# ── Assembly ──────────────────────────────────────────────────


def assemble_task(
    spec: TaskSpec,
    pool: ImageSet,
    test: ImageSet,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    test_size: int,
) -> TaskDataset:
    """Cut already-transformed pool/test sets into a TaskDataset and relabel."""
    if test_size > len(test):
        raise CapacityError(f"Requested {test_size} test samples exceeds test set of {len(test)}")

    def _split(source: ImageSet, idx) -> ImageSet:
        return ImageSet(source.images[idx], transform_labels(spec, source.labels[idx]))

    return TaskDataset(
        spec=spec,
        train=_split(pool, train_idx),
        val=_split(pool, val_idx),
        test=_split(test, np.arange(test_size)),
    )


def build_sequence(
    train_pool: ImageSet,
    test: ImageSet,
    config: SequenceConfig,
    seed: int | None = None,
    fold: tuple[int, int] | None = None,
) -> TaskSequence:
    """Build the configured task sequence from a base (train pool, test) pair."""
    seed = config.seed if seed is None else seed
    if train_pool.images.shape[1] != INPUT_DIM or test.images.shape[1] != INPUT_DIM:
        raise ConsistencyError(f"Base images must have {INPUT_DIM} columns")
    train_idx, val_idx = split_indices(len(train_pool), config, seed, fold)
    if config.test_size > len(test):
        raise CapacityError(f"Requested {config.test_size} test samples exceeds test set of {len(test)}")

    tasks = []
    for spec in make_task_specs(config, seed):
        pool_t = ImageSet(transform_images(spec, train_pool.images), train_pool.labels)
        test_t = ImageSet(transform_images(spec, test.images), test.labels)
        tasks.append(assemble_task(spec, pool_t, test_t, train_idx, val_idx, config.test_size))
        logger.debug("Built task %d (%s)", spec.task_id, spec.transform)
    return TaskSequence(
        tasks=tuple(tasks),
        base_dataset_name=config.base_dataset,
        metadata={"dataset": config.dataset, "seed": seed, "fold": list(fold) if fold else None},
    )
