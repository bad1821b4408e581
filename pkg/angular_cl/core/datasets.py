"""
Dataset types

Image sets and task descriptions shared by the loader, the sequence builder
and the learners. Arrays are made read-only on construction so data objects
can be shared freely between experiment workers.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConsistencyError

IMAGE_SIDE = 28
INPUT_DIM = IMAGE_SIDE * IMAGE_SIDE
NUM_CLASSES = 10

# Transform kinds
IDENTITY = "identity"
PERMUTE = "permute"
ROTATE = "rotate"

# Objective kinds
MULTICLASS = "multiclass-10"
ONE_VS_REST = "one-vs-rest"


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ImageSet:
    """n_samples × 784 intensities in [0, 1] with integer labels.

    Labels are class ids 0..9 for raw data, or 0/1 after one-vs-rest relabeling.
    """

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2:
            raise ConsistencyError(f"Images must be 2-D, got shape {images.shape}")
        if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
            raise ConsistencyError(
                f"Label count {labels.shape[0] if labels.ndim == 1 else labels.shape} "
                f"does not match image rows {images.shape[0]}"
            )
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ConsistencyError("Image intensities must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise ConsistencyError(f"Labels must lie in 0..{NUM_CLASSES - 1}")
        object.__setattr__(self, "images", _readonly(images))
        object.__setattr__(self, "labels", _readonly(labels))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices: np.ndarray) -> "ImageSet":
        return ImageSet(self.images[indices], self.labels[indices])


@dataclass(frozen=True)
class TaskSpec:
    """How one task is derived from the base data."""

    task_id: int
    transform: str = IDENTITY
    seed: int | None = None  # permute
    angle: float | None = None  # rotate, degrees in [0, 360)
    objective: str = MULTICLASS
    target_class: int | None = None  # one-vs-rest

    def __post_init__(self):
        if self.transform not in (IDENTITY, PERMUTE, ROTATE):
            raise ConsistencyError(f"Unknown transform: {self.transform}")
        if self.transform == PERMUTE and self.seed is None:
            raise ConsistencyError("Permute transform needs a seed")
        if self.transform == ROTATE:
            if self.angle is None or not 0.0 <= self.angle < 360.0:
                raise ConsistencyError(f"Rotation angle must be in [0, 360), got {self.angle}")
        if self.objective not in (MULTICLASS, ONE_VS_REST):
            raise ConsistencyError(f"Unknown objective: {self.objective}")
        if self.objective == ONE_VS_REST and (
            self.target_class is None or not 0 <= self.target_class < NUM_CLASSES
        ):
            raise ConsistencyError(f"One-vs-rest needs a target class, got {self.target_class}")

    @property
    def out_dim(self) -> int:
        return NUM_CLASSES if self.objective == MULTICLASS else 1

    @property
    def loss_kind(self) -> str:
        return "softmax-ce" if self.objective == MULTICLASS else "sigmoid-bce"

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "transform": self.transform,
            "seed": self.seed,
            "angle": self.angle,
            "objective": self.objective,
            "target_class": self.target_class,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TaskSpec":
        return cls(
            task_id=int(raw["task_id"]),
            transform=raw.get("transform", IDENTITY),
            seed=raw.get("seed"),
            angle=raw.get("angle"),
            objective=raw.get("objective", MULTICLASS),
            target_class=raw.get("target_class"),
        )


@dataclass(frozen=True)
class TaskDataset:
    """One task's transformed (and possibly relabeled) train/val/test splits."""

    spec: TaskSpec
    train: ImageSet
    val: ImageSet
    test: ImageSet


@dataclass(frozen=True)
class TaskSequence:
    tasks: tuple[TaskDataset, ...]
    base_dataset_name: str = "mnist"
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, index: int) -> TaskDataset:
        return self.tasks[index]

    def __iter__(self):
        return iter(self.tasks)
