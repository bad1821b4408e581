"""
Task Sequence Cache

Stores each task's fully transformed training pool and test set in a binary
container under <data_dir>/cache/<dataset>-<key>/, plus a manifest. Splits
(shuffled or k-fold) are cut at load time, so one cache serves every fold.

The cache key hashes dataset, sequence length, seed and container version.
Preparing twice is a no-op ("cache hit"); a task file failing its checksum is
rebuilt.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import CacheIntegrityError
from .config_parser import SequenceConfig
from .container import FORMAT_VERSION, read_container, write_container
from .datasets import ImageSet, TaskSequence, TaskSpec
from .idx_loader import load_idx
from .task_sequence import assemble_task, make_task_specs, split_indices, transform_images

logger = logging.getLogger("angular_cl.cache")

RAW_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

MANIFEST = "manifest.json"
TASK_KIND = "task-pool"


@dataclass
class PrepareResult:
    """Outcome of preparing one sequence cache."""

    path: str
    cache_hit: bool
    rebuilt_tasks: list[int] = field(default_factory=list)


# ── Raw data ──────────────────────────────────────────────────


def raw_dir(data_dir: str, base_dataset: str) -> str:
    return os.path.join(data_dir, base_dataset)


def raw_file_paths(data_dir: str, base_dataset: str) -> dict[str, str]:
    """Resolve the four raw IDX files (plain or .gz); error names what is missing."""
    directory = raw_dir(data_dir, base_dataset)
    paths, missing = {}, []
    for key, name in RAW_FILES.items():
        for candidate in (name, f"{name}.gz"):
            path = os.path.join(directory, candidate)
            if os.path.exists(path):
                paths[key] = path
                break
        else:
            missing.append(name)
    if missing:
        raise FileNotFoundError(
            f"Missing raw {base_dataset} files in {directory}: {', '.join(missing)} "
            f"(plain or .gz). Place them there or run `prepare --download`."
        )
    return paths


def load_base(data_dir: str, base_dataset: str) -> tuple[ImageSet, ImageSet]:
    """Load the (training pool, test set) pair of a base dataset."""
    paths = raw_file_paths(data_dir, base_dataset)
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    return train, test


# ── Cache layout ──────────────────────────────────────────────


def cache_key(config: SequenceConfig, seed: int) -> str:
    raw = {
        "dataset": config.dataset,
        "num_tasks": config.num_tasks,
        "seed": seed,
        "format": FORMAT_VERSION,
    }
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode("utf-8")).hexdigest()


def cache_dir(data_dir: str, config: SequenceConfig, seed: int) -> str:
    return os.path.join(data_dir, "cache", f"{config.dataset}-{cache_key(config, seed)[:12]}")


def _task_file(task_id: int) -> str:
    return f"task_{task_id:02d}.acl"


def _encode_images(images: np.ndarray) -> np.ndarray:
    """uint8 when every intensity is exactly byte/255, float32 otherwise."""
    quantized = np.rint(images * 255.0).astype(np.uint8)
    if np.array_equal(quantized.astype(np.float32) / np.float32(255.0), images):
        return quantized
    return np.asarray(images, dtype=np.float32)


def _decode_images(stored: np.ndarray) -> np.ndarray:
    if stored.dtype == np.uint8:
        return stored.astype(np.float32) / np.float32(255.0)
    return stored.astype(np.float32)


# ── Prepare ───────────────────────────────────────────────────


def _write_task(path: str, spec: TaskSpec, pool: ImageSet, test: ImageSet, key: str, seed: int) -> None:
    arrays = {
        "pool_images": _encode_images(transform_images(spec, pool.images)),
        "pool_labels": pool.labels.astype(np.uint8),
        "test_images": _encode_images(transform_images(spec, test.images)),
        "test_labels": test.labels.astype(np.uint8),
    }
    metadata = {"spec": spec.to_dict(), "seed": seed, "cache_key": key}
    write_container(path, arrays, metadata, kind=TASK_KIND)


def _task_is_valid(path: str, key: str) -> bool:
    if not os.path.exists(path):
        return False
    try:
        _, metadata = read_container(path, kind=TASK_KIND)
    except CacheIntegrityError as e:
        logger.warning("Cache file %s is corrupt (%s), rebuilding", path, e)
        return False
    return metadata.get("cache_key") == key


def prepare_cache(
    data_dir: str,
    config: SequenceConfig,
    seed: int | None = None,
    force: bool = False,
) -> PrepareResult:
    """Write (or verify) the cached task pools for a sequence config."""
    seed = config.seed if seed is None else seed
    key = cache_key(config, seed)
    directory = cache_dir(data_dir, config, seed)
    specs = make_task_specs(config, seed)

    stale = [
        spec.task_id
        for spec in specs
        if force or not _task_is_valid(os.path.join(directory, _task_file(spec.task_id)), key)
    ]
    manifest_path = os.path.join(directory, MANIFEST)
    if not stale and os.path.exists(manifest_path):
        logger.info("Cache hit: %s", directory)
        return PrepareResult(path=directory, cache_hit=True)

    if stale:
        pool, test = load_base(data_dir, config.base_dataset)
        for spec in specs:
            if spec.task_id in stale:
                logger.info("Writing cached task %d to %s", spec.task_id, directory)
                _write_task(os.path.join(directory, _task_file(spec.task_id)), spec, pool, test, key, seed)

    manifest = {
        "version": FORMAT_VERSION,
        "dataset": config.dataset,
        "seed": seed,
        "cache_key": key,
        "tasks": [{"file": _task_file(s.task_id), "spec": s.to_dict()} for s in specs],
    }
    os.makedirs(directory, exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return PrepareResult(path=directory, cache_hit=False, rebuilt_tasks=stale)


# ── Load ──────────────────────────────────────────────────────


def load_cached_sequence(
    data_dir: str,
    config: SequenceConfig,
    seed: int | None = None,
    fold: tuple[int, int] | None = None,
) -> TaskSequence:
    """Load a prepared sequence and cut the configured splits."""
    seed = config.seed if seed is None else seed
    directory = cache_dir(data_dir, config, seed)
    if not os.path.exists(os.path.join(directory, MANIFEST)):
        raise FileNotFoundError(
            f"No prepared cache for {config.dataset} (seed {seed}) in {directory}; run `prepare` first"
        )

    tasks = []
    train_idx = val_idx = None
    for spec in make_task_specs(config, seed):
        arrays, metadata = read_container(os.path.join(directory, _task_file(spec.task_id)), kind=TASK_KIND)
        if TaskSpec.from_dict(metadata["spec"]) != spec:
            raise CacheIntegrityError(f"Cached task {spec.task_id} does not match its spec")
        pool = ImageSet(_decode_images(arrays["pool_images"]), arrays["pool_labels"].astype(np.int64))
        test = ImageSet(_decode_images(arrays["test_images"]), arrays["test_labels"].astype(np.int64))
        if train_idx is None:
            train_idx, val_idx = split_indices(len(pool), config, seed, fold)
        tasks.append(assemble_task(spec, pool, test, train_idx, val_idx, config.test_size))
    return TaskSequence(
        tasks=tuple(tasks),
        base_dataset_name=config.base_dataset,
        metadata={"dataset": config.dataset, "seed": seed, "fold": list(fold) if fold else None},
    )
