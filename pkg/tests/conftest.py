"""Shared fixtures: synthetic MNIST-shaped data and small configs."""

import gzip
import os
import struct

import numpy as np
import pytest

from angular_cl.core.config_parser import ContinualConfig, ExperimentConfig, SequenceConfig, TrainingConfig
from angular_cl.core.datasets import ImageSet
from angular_cl.core.idx_loader import IMAGE_MAGIC, LABEL_MAGIC
from angular_cl.core.sequence_cache import RAW_FILES
from angular_cl.core.task_sequence import build_sequence


def write_idx_images(path: str, pixels: np.ndarray, magic: int = IMAGE_MAGIC) -> str:
    n, rows, cols = pixels.shape
    raw = struct.pack(">IIII", magic, n, rows, cols) + pixels.astype(np.uint8).tobytes()
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(raw)
    return path


def write_idx_labels(path: str, labels: np.ndarray, magic: int = LABEL_MAGIC) -> str:
    raw = struct.pack(">II", magic, len(labels)) + labels.astype(np.uint8).tobytes()
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(raw)
    return path


def synthetic_pixels(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Noisy 28×28 uint8 images whose class lights up its own band of 70 pixels."""
    generator = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    generator.shuffle(labels)
    pixels = generator.integers(0, 60, size=(n, 784), dtype=np.int64)
    for c in range(10):
        pixels[labels == c, c * 70:(c + 1) * 70] = 255
    return pixels.reshape(n, 28, 28).astype(np.uint8), labels.astype(np.uint8)


def to_image_set(pixels: np.ndarray, labels: np.ndarray) -> ImageSet:
    images = pixels.reshape(len(pixels), -1).astype(np.float32) / np.float32(255.0)
    return ImageSet(images, labels.astype(np.int64))


# ── Data fixtures ─────────────────────────────────────────────


@pytest.fixture
def base_sets():
    """(training pool, test set) of synthetic 10-class data."""
    pool = to_image_set(*synthetic_pixels(600, seed=1))
    test = to_image_set(*synthetic_pixels(200, seed=2))
    return pool, test


@pytest.fixture
def small_sequence_config():
    return SequenceConfig(dataset="permuted-mnist", num_tasks=3, train_size=400, val_size=100, test_size=100, seed=0)


@pytest.fixture
def small_sequence(base_sets, small_sequence_config):
    pool, test = base_sets
    return build_sequence(pool, test, small_sequence_config)


@pytest.fixture
def raw_data_dir(tmp_path):
    """Data directory holding synthetic raw MNIST IDX files."""
    data_dir = tmp_path / "data"
    raw = data_dir / "mnist"
    raw.mkdir(parents=True)
    train_pixels, train_labels = synthetic_pixels(600, seed=1)
    test_pixels, test_labels = synthetic_pixels(200, seed=2)
    write_idx_images(str(raw / RAW_FILES["train_images"]), train_pixels)
    write_idx_labels(str(raw / RAW_FILES["train_labels"]), train_labels)
    write_idx_images(str(raw / RAW_FILES["test_images"]), test_pixels)
    write_idx_labels(str(raw / RAW_FILES["test_labels"]), test_labels)
    return str(data_dir)


# ── Config fixtures ───────────────────────────────────────────


@pytest.fixture
def tiny_training():
    return TrainingConfig(learning_rate=0.01, batch_size=32, iterations=40, eval_every=20, eval_batch_size=64)


@pytest.fixture
def tiny_continual(tiny_training):
    return ContinualConfig(
        hidden_widths=[16, 8],
        candidate_fraction=0.25,
        candidate_iterations=10,
        selective_iterations=10,
        expansion_k=3,
        training=tiny_training,
    )


@pytest.fixture
def tiny_experiment(tmp_path, raw_data_dir, small_sequence_config, tiny_continual):
    return ExperimentConfig(
        name="tiny",
        sequence=small_sequence_config,
        continual=tiny_continual,
        folds=1,
        seeds=[0],
        data_dir=raw_data_dir,
        output_dir=str(tmp_path / "runs"),
        workers=1,
    )


@pytest.fixture
def slow_data_dir():
    """Real MNIST directory for long acceptance runs; skips when absent."""
    data_dir = os.environ.get("ANGULAR_CL_DATA_DIR")
    if not data_dir or not os.path.isdir(os.path.join(data_dir, "mnist")):
        pytest.skip("real MNIST not available (set ANGULAR_CL_DATA_DIR)")
    return data_dir
