"""Unit tests for angular_cl.core.task_sequence module."""

import numpy as np
import pytest

from angular_cl.core.config_parser import SequenceConfig
from angular_cl.core.datasets import IDENTITY, MULTICLASS, ONE_VS_REST, PERMUTE, ROTATE, ImageSet
from angular_cl.core.task_sequence import (
    build_sequence,
    kfold_indices,
    kfold_split,
    make_permutation,
    make_task_specs,
    relabel_one_vs_rest,
    rotate_image,
    rotate_images,
    split_indices,
)
from angular_cl.errors import CapacityError, ConsistencyError, FoldIndexError


# ── Permutations ──────────────────────────────────────────────


class TestPermutation:
    def test_is_bijection(self):
        perm = make_permutation(12345)
        assert sorted(perm.tolist()) == list(range(784))

    def test_deterministic(self):
        assert np.array_equal(make_permutation(7), make_permutation(7))

    def test_seeds_differ(self):
        assert not np.array_equal(make_permutation(7), make_permutation(8))


# ── Rotation ──────────────────────────────────────────────────


class TestRotation:
    def _image(self):
        generator = np.random.default_rng(0)
        return generator.random((28, 28)).astype(np.float32)

    def test_zero_angle_is_identity(self):
        image = self._image()
        assert np.array_equal(rotate_image(image, 0.0), image)

    def test_half_turn_flips_both_axes(self):
        image = self._image()
        np.testing.assert_allclose(rotate_image(image, 180.0), image[::-1, ::-1], atol=1e-5)

    def test_four_quarter_turns(self):
        image = self._image()
        out = image
        for _ in range(4):
            out = rotate_image(out, 90.0)
        np.testing.assert_allclose(out, image, atol=1e-4)

    def test_output_range_clamped(self):
        images = np.ones((3, 784), dtype=np.float32)
        out = rotate_images(images, 37.0)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_corners_fill_with_zero(self):
        image = np.ones((28, 28), dtype=np.float32)
        out = rotate_image(image, 45.0)
        assert out[0, 0] == 0.0
        assert out[14, 14] == pytest.approx(1.0)

    def test_angle_out_of_range(self):
        with pytest.raises(ValueError):
            rotate_images(np.zeros((1, 784), dtype=np.float32), 360.0)

    def test_wrong_image_shape(self):
        with pytest.raises(ConsistencyError):
            rotate_image(np.zeros((27, 28), dtype=np.float32), 10.0)


class TestRelabel:
    def test_one_vs_rest(self):
        assert list(relabel_one_vs_rest(np.array([3, 1, 3, 0]), 3)) == [1, 0, 1, 0]


# ── Task specs ────────────────────────────────────────────────


class TestTaskSpecs:
    def test_permuted_sequence(self):
        specs = make_task_specs(SequenceConfig(dataset="permuted-mnist", num_tasks=10, seed=0))
        assert len(specs) == 10
        assert specs[0].transform == IDENTITY
        assert all(s.transform == PERMUTE for s in specs[1:])
        assert all(s.objective == MULTICLASS and s.out_dim == 10 for s in specs)

    def test_distinct_permutations(self):
        specs = make_task_specs(SequenceConfig(dataset="permuted-mnist", num_tasks=10, seed=4))
        perms = {make_permutation(s.seed).tobytes() for s in specs[1:]}
        assert len(perms) == 9
        assert np.arange(784).tobytes() not in perms

    def test_rotated_sequence(self):
        specs = make_task_specs(SequenceConfig(dataset="rotated-mnist", num_tasks=12, seed=0))
        assert all(s.transform == ROTATE and 0.0 <= s.angle < 360.0 for s in specs)
        assert all(s.objective == ONE_VS_REST and s.out_dim == 1 for s in specs)
        assert [s.target_class for s in specs] == [i % 10 for i in range(12)]
        # task 0 is rotated too
        assert specs[0].angle > 0.0

    def test_seed_determinism(self):
        config = SequenceConfig(dataset="rotated-mnist", num_tasks=4, seed=3)
        assert make_task_specs(config) == make_task_specs(config)
        assert make_task_specs(config) != make_task_specs(config, seed=4)


# ── Splits ────────────────────────────────────────────────────


class TestSplits:
    def test_shuffled_split_disjoint(self):
        config = SequenceConfig(train_size=50, val_size=20)
        train, val = split_indices(100, config, seed=0)
        assert len(train) == 50 and len(val) == 20
        assert not set(train.tolist()) & set(val.tolist())

    def test_capacity(self):
        with pytest.raises(CapacityError):
            split_indices(60, SequenceConfig(train_size=50, val_size=20), seed=0)

    def test_folds_partition(self):
        heldout = [kfold_indices(103, 5, f, seed=1)[1] for f in range(5)]
        everything = np.concatenate(heldout)
        assert sorted(everything.tolist()) == list(range(103))
        for f in range(5):
            train, held = kfold_indices(103, 5, f, seed=1)
            assert len(train) + len(held) == 103
            assert not set(train.tolist()) & set(held.tolist())

    def test_fold_out_of_range(self):
        with pytest.raises(FoldIndexError):
            kfold_indices(100, 5, 5, seed=0)
        with pytest.raises(FoldIndexError):
            kfold_indices(100, 1, 0, seed=0)

    def test_kfold_split_sets(self, base_sets):
        pool, _ = base_sets
        train, held = kfold_split(pool, 3, 0, seed=0)
        assert len(train) + len(held) == len(pool)

    def test_fold_split_truncates(self):
        config = SequenceConfig(train_size=30, val_size=5)
        train, val = split_indices(100, config, seed=0, fold=(5, 2))
        assert len(train) == 30 and len(val) == 5

    def test_fold_capacity(self):
        with pytest.raises(CapacityError):
            split_indices(100, SequenceConfig(train_size=90, val_size=5), seed=0, fold=(5, 0))


# ── build_sequence ────────────────────────────────────────────


class TestBuildSequence:
    def test_shapes(self, small_sequence):
        assert len(small_sequence) == 3
        for task in small_sequence:
            assert task.train.images.shape == (400, 784)
            assert len(task.val) == 100
            assert len(task.test) == 100

    def test_first_task_untransformed(self, base_sets, small_sequence_config):
        pool, test = base_sets
        seq = build_sequence(pool, test, small_sequence_config)
        assert np.array_equal(seq[0].test.images, test.images[:100])

    def test_same_samples_across_tasks(self, small_sequence):
        perm = make_permutation(small_sequence[1].spec.seed)
        assert np.array_equal(small_sequence[1].train.images, small_sequence[0].train.images[:, perm])
        assert np.array_equal(small_sequence[1].train.labels, small_sequence[0].train.labels)

    def test_deterministic(self, base_sets, small_sequence_config):
        pool, test = base_sets
        a = build_sequence(pool, test, small_sequence_config)
        b = build_sequence(pool, test, small_sequence_config)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.train.images, tb.train.images)
            assert np.array_equal(ta.val.labels, tb.val.labels)

    def test_rotated_labels_binary(self, base_sets):
        pool, test = base_sets
        config = SequenceConfig(dataset="rotated-mnist", num_tasks=2, train_size=300, val_size=50, test_size=100)
        seq = build_sequence(pool, test, config)
        for task in seq:
            assert set(np.unique(task.train.labels).tolist()) <= {0, 1}
            assert task.train.labels.mean() < 0.5
            assert task.spec.target_class == task.spec.task_id % 10

    def test_test_capacity(self, base_sets):
        pool, test = base_sets
        with pytest.raises(CapacityError):
            build_sequence(pool, test, SequenceConfig(num_tasks=1, train_size=100, val_size=10, test_size=500))

    def test_wrong_width(self):
        pool = ImageSet(np.zeros((10, 100), dtype=np.float32), np.zeros(10, dtype=np.int64))
        with pytest.raises(ConsistencyError):
            build_sequence(pool, pool, SequenceConfig(num_tasks=1, train_size=5, val_size=1, test_size=5))
