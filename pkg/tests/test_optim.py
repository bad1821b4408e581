"""Unit tests for angular_cl.optim (Adam, objectives, trainer)."""

import csv
import os
from unittest.mock import patch

import numpy as np
import pytest

from angular_cl.core.config_parser import TrainingConfig
from angular_cl.core.datasets import ImageSet
from angular_cl.errors import ConfigError, ConsistencyError, EmptyInputError, NumericError, TrainingAborted
from angular_cl.model.network import NodeId, head_param_name, hidden_param_name, init_network
from angular_cl.model.snapshot import take_snapshot
from angular_cl.optim.adam import AdamState, adam_step
from angular_cl.optim.objectives import RegularizerSpec, anchor_penalty, l1_penalty, penalty, total_loss
from angular_cl.optim.trainer import HISTORY_COLUMNS, batch_indices, eval_accuracy, train


# ── Adam ──────────────────────────────────────────────────────


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -1.0, 0.5])}
        grads = {"w": np.array([0.3, -2.0, 0.01])}
        adam_step(params, grads, AdamState(), TrainingConfig(learning_rate=0.01))
        np.testing.assert_allclose(params["w"], [0.99, -0.99, 0.49], atol=1e-6)

    def test_masked_entries_untouched(self):
        params = {"w": np.ones((2, 3))}
        mask = {"w": np.array([[True, False, True], [False, False, False]])}
        state = AdamState()
        adam_step(params, {"w": np.ones((2, 3))}, state, TrainingConfig(), mask)
        assert params["w"][0, 1] == 1.0 and (params["w"][1] == 1.0).all()
        assert params["w"][0, 0] < 1.0
        assert state.m["w"][0, 1] == 0.0 and state.v["w"][1].sum() == 0.0

    def test_non_finite_gradient_touches_nothing(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        grads = {"a": np.ones(2), "b": np.array([np.inf, 0.0])}
        with pytest.raises(NumericError) as exc:
            adam_step(params, grads, AdamState(), TrainingConfig())
        assert exc.value.param == "b"
        assert (params["a"] == 1.0).all()

    def test_zero_gradient_only_advances_timestep(self):
        params = {"w": np.array([0.25, -3.0])}
        state = AdamState()
        for _ in range(3):
            adam_step(params, {"w": np.zeros(2)}, state, TrainingConfig(learning_rate=0.1))
        np.testing.assert_array_equal(params["w"], [0.25, -3.0])
        assert state.t == 3

    def test_quadratic_descent(self):
        params = {"w": np.array([1.0])}
        state = AdamState()
        config = TrainingConfig(learning_rate=0.1)
        for _ in range(50):
            adam_step(params, {"w": 2.0 * params["w"]}, state, config)
        assert abs(params["w"][0]) < 1.0
        assert state.t == 50

    def test_moments_grow_after_surgery(self):
        state = AdamState()
        params = {"w": np.ones((2, 2))}
        adam_step(params, {"w": np.ones((2, 2))}, state, TrainingConfig())
        params["w"] = np.vstack([params["w"], np.ones((1, 2))])
        adam_step(params, {"w": np.ones((3, 2))}, state, TrainingConfig())
        assert state.m["w"].shape == (3, 2)
        assert state.t == 2


# ── Objectives ────────────────────────────────────────────────


class TestPenalties:
    def test_l1_value_and_subgradient(self):
        params = {"hidden.0.weights": np.array([[1.0, -2.0], [0.0, 3.0]]), "hidden.0.bias": np.ones(2)}
        value, grads = l1_penalty(params, 0.5)
        assert value == pytest.approx(3.0)
        np.testing.assert_array_equal(grads["hidden.0.weights"], [[0.5, -0.5], [0.0, 0.5]])
        assert "hidden.0.bias" not in grads

    def test_l1_scope(self):
        params = {"hidden.0.weights": np.ones((2, 2)), "head.1.weights": -np.ones((1, 2))}
        value, grads = l1_penalty(params, 1.0, scope=("head.1.weights",))
        assert value == pytest.approx(2.0)
        assert list(grads) == ["head.1.weights"]

    def test_anchor_single_entry(self):
        value, grads = anchor_penalty({"w": np.array([3.0])}, {"w": np.array([1.0])}, 2.0)
        assert value == pytest.approx(8.0)
        assert grads["w"][0] == pytest.approx(8.0)

    def test_anchor_ignores_newer_entries(self):
        params = {"w": np.array([[3.0, 5.0], [7.0, 9.0]])}
        value, grads = anchor_penalty(params, {"w": np.array([[1.0]])}, 1.0)
        assert value == pytest.approx(4.0)
        np.testing.assert_array_equal(grads["w"], [[4.0, 0.0], [0.0, 0.0]])

    def test_anchor_shape_must_extend(self):
        with pytest.raises(ConsistencyError):
            anchor_penalty({"w": np.ones(1)}, {"w": np.ones(2)}, 1.0)

    def test_anchor_at_own_snapshot_is_zero(self):
        net = init_network([4], seed=0, dtype=np.float64)
        net.add_head(0, 10)
        value, _ = penalty(net, RegularizerSpec.anchor_l2(1.0, take_snapshot(net, 0)))
        assert value == 0.0

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            RegularizerSpec(kind="anchor_l2", coefficient=1.0)
        with pytest.raises(ConfigError):
            RegularizerSpec.l1(-1.0)
        with pytest.raises(ConfigError):
            RegularizerSpec(kind="l2")

    def test_total_loss_masks_penalty_gradients(self):
        net = init_network([4], seed=0, dtype=np.float64)
        net.add_head(0, 10)
        net.freeze(NodeId(0, 1), at_task=1)
        batch = np.random.default_rng(0).random((8, 784))
        _, grads = total_loss(net, batch, np.arange(8), 0, RegularizerSpec.l1(1.0))
        assert not grads[hidden_param_name(0, "weights")][1].any()
        assert grads[hidden_param_name(0, "weights")][0].any()


# ── Trainer ───────────────────────────────────────────────────


class TestBatches:
    def test_deterministic(self):
        a = [b.tolist() for b in batch_indices(10, 4, 6, seed=3)]
        b = [b.tolist() for b in batch_indices(10, 4, 6, seed=3)]
        assert a == b
        assert a != [b.tolist() for b in batch_indices(10, 4, 6, seed=3, stream=1)]

    def test_each_pass_is_a_permutation(self):
        batches = list(batch_indices(12, 4, 6, seed=0))
        assert sorted(np.concatenate(batches[:3]).tolist()) == list(range(12))
        assert sorted(np.concatenate(batches[3:]).tolist()) == list(range(12))

    def test_batch_larger_than_data(self):
        batches = list(batch_indices(5, 256, 2, seed=0))
        assert all(len(b) == 5 for b in batches)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            list(batch_indices(0, 4, 1, seed=0))


class TestEvalAccuracy:
    def _constant_net(self, out_dim, bias):
        net = init_network([4], seed=0)
        net.add_head(0, out_dim)
        net.heads[0].weights[...] = 0.0
        net.heads[0].bias[...] = bias
        return net

    def test_argmax(self):
        bias = np.zeros(10)
        bias[1] = 1.0
        net = self._constant_net(10, bias)
        labels = np.array([1, 1, 1, 0, 2, 3, 4, 5, 6, 7])
        assert eval_accuracy(net, np.zeros((10, 784)), labels, 0, batch_size=3) == pytest.approx(0.3)

    def test_single_logit(self):
        net = self._constant_net(1, 1.0)
        assert eval_accuracy(net, np.zeros((4, 784)), np.array([1, 0, 1, 1]), 0) == pytest.approx(0.75)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            eval_accuracy(self._constant_net(1, 0.0), np.zeros((0, 784)), np.array([]), 0)

    def test_untrained_head_near_chance(self):
        images = np.random.default_rng(42).random((1000, 784))
        labels = np.arange(1000) % 10
        for seed in range(5):
            net = init_network([16, 8], seed=seed)
            net.add_head(0, 10)
            assert 0.05 <= eval_accuracy(net, images, labels, 0) <= 0.20


class TestTrain:
    def _net(self, task):
        net = init_network([16, 8], seed=0)
        net.add_head(task.spec.task_id, task.spec.out_dim)
        return net

    def test_learns_and_writes_history(self, small_sequence, tmp_path):
        task = small_sequence[0]
        net = self._net(task)
        config = TrainingConfig(learning_rate=0.01, batch_size=32, iterations=100, eval_every=20, eval_batch_size=64)
        path = str(tmp_path / "hist" / "task0.csv")
        history = train(net, task, 0, config, history_path=path)
        assert len(history.losses) == 100
        assert [it for it, _ in history.val_accuracy] == [20, 40, 60, 80, 100]
        assert np.mean(history.losses[-10:]) < np.mean(history.losses[:10])
        assert history.final_val_accuracy > 0.5
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == HISTORY_COLUMNS
        assert len(rows) == 101
        assert rows[1][2] == "" and rows[20][2] != ""

    def test_deterministic(self, small_sequence, tiny_training):
        task = small_sequence[0]
        a, b = self._net(task), self._net(task)
        train(a, task, 0, tiny_training)
        train(b, task, 0, tiny_training)
        assert a.digest() == b.digest()

    def test_mask_limits_updates(self, small_sequence, tiny_training):
        task = small_sequence[0]
        net = self._net(task)
        body = net.hidden[0].weights.copy()
        head = net.heads[0].weights.copy()
        mask = {
            head_param_name(0, "weights"): np.ones_like(head, dtype=bool),
            head_param_name(0, "bias"): np.ones(10, dtype=bool),
        }
        train(net, task, 0, tiny_training, mask=mask)
        assert np.array_equal(net.hidden[0].weights, body)
        assert not np.array_equal(net.heads[0].weights, head)

    def test_frozen_node_untouched(self, small_sequence, tiny_training):
        task = small_sequence[0]
        net = self._net(task)
        net.freeze(NodeId(0, 2), at_task=1)
        row = net.hidden[0].weights[2].copy()
        outgoing = net.hidden[1].weights[:, 2].copy()
        train(net, task, 0, tiny_training, reg=RegularizerSpec.l1(1e-3))
        assert np.array_equal(net.hidden[0].weights[2], row)
        assert np.array_equal(net.hidden[1].weights[:, 2], outgoing)

    def test_l1_drives_first_layer_to_zero(self, small_sequence):
        task = small_sequence[0]
        config = TrainingConfig(learning_rate=2e-4, batch_size=32, iterations=1000, eval_every=1000)
        near_zero = {}
        for mu in (0.0, 1.0):
            net = self._net(task)
            train(net, task, 0, config, reg=RegularizerSpec.l1(mu))
            near_zero[mu] = float(np.mean(np.abs(net.hidden[0].weights) < 1e-3))
        assert near_zero[1.0] >= 0.5
        assert near_zero[0.0] < 0.05

    def test_anchor_distance_shrinks_with_lambda(self, small_sequence, tiny_training):
        config = TrainingConfig(learning_rate=1e-3, batch_size=32, iterations=300, eval_every=300)
        monotone = 0
        for seed in range(3):
            base = init_network([16, 8], seed=seed)
            base.add_head(0, 10)
            train(base, small_sequence[0], 0, tiny_training)
            anchor = take_snapshot(base, 0)
            distances = []
            for lam in (0.0, 0.1, 1.0, 10.0):
                net = base.copy()
                net.add_head(1, 10)
                reg = RegularizerSpec.anchor_l2(lam, anchor) if lam else None
                train(net, small_sequence[1], 1, config, reg=reg)
                params = net.parameters()
                total = 0.0
                for name, old in anchor.parameters().items():
                    block = tuple(slice(0, n) for n in old.shape)
                    total += float(np.sum((params[name][block].astype(np.float64) - old) ** 2))
                distances.append(np.sqrt(total))
            monotone += all(b <= a for a, b in zip(distances, distances[1:]))
        assert monotone >= 2

    def test_zero_iterations(self, small_sequence, tiny_training):
        task = small_sequence[0]
        net = self._net(task)
        before = net.digest()
        history = train(net, task, 0, tiny_training, iterations=0)
        assert history.losses == [] and net.digest() == before

    def test_bare_image_set(self, small_sequence, tiny_training):
        task = small_sequence[0]
        history = train(self._net(task), task.train, 0, tiny_training)
        assert history.val_accuracy == []

    def test_non_finite_loss_aborts(self, small_sequence, tiny_training, tmp_path):
        task = small_sequence[0]
        net = self._net(task)
        checkpoint = str(tmp_path / "last.snapshot")
        with patch("angular_cl.optim.trainer.total_loss", return_value=(float("nan"), {})):
            with pytest.raises(TrainingAborted) as exc:
                train(net, task, 0, tiny_training, checkpoint_path=checkpoint)
        assert exc.value.last_finite is not None
        assert isinstance(exc.value.cause, NumericError)
        assert os.path.exists(checkpoint)
