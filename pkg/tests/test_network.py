"""Unit tests for angular_cl.model.network and angular_cl.model.snapshot modules."""

import numpy as np
import pytest

from angular_cl.errors import (
    ConfigError,
    ConsistencyError,
    HeadConflictError,
    NumericError,
    StaleNodeError,
    UnknownTaskError,
    UnsupportedOperationError,
)
from angular_cl.model.network import (
    SIGMOID_BCE,
    SOFTMAX_CE,
    NodeId,
    backward,
    forward,
    head_param_name,
    hidden_param_name,
    init_network,
    loss_and_dlogits,
    node_vector,
)
from angular_cl.model.snapshot import load_snapshot, restore_network, save_snapshot, take_snapshot


def _batch(n=16, seed=0, dim=784):
    return np.random.default_rng(seed).random((n, dim))


def _net(arch=(8, 4), heads=((0, 10),), seed=0, dtype=np.float64):
    net = init_network(list(arch), seed=seed, dtype=dtype)
    for task_id, out_dim in heads:
        net.add_head(task_id, out_dim)
    return net


# ── Construction ──────────────────────────────────────────────


class TestInit:
    def test_shapes_and_dtype(self):
        net = init_network([312, 128], seed=0)
        assert net.widths == [312, 128]
        assert net.hidden[0].weights.shape == (312, 784)
        assert net.hidden[0].weights.dtype == np.float32
        assert not net.hidden[1].bias.any()

    def test_he_scale(self):
        net = init_network([400], seed=1)
        std = float(net.hidden[0].weights.std())
        assert std == pytest.approx(np.sqrt(2.0 / 784), rel=0.05)

    def test_deterministic(self):
        assert _net(seed=3).digest() == _net(seed=3).digest()
        assert _net(seed=3).digest() != _net(seed=4).digest()

    def test_bad_arch(self):
        with pytest.raises(ConfigError):
            init_network([8, 0])


# ── Forward / backward ────────────────────────────────────────


class TestGradients:
    @pytest.mark.parametrize("loss_kind,out_dim", [(SOFTMAX_CE, 4), (SIGMOID_BCE, 1)])
    def test_matches_central_differences(self, loss_kind, out_dim):
        step = 1e-4
        for trial in range(20):
            net = init_network([8, 4], seed=trial, dtype=np.float64)
            net.add_head(0, out_dim)
            x = _batch(n=6, seed=100 + trial)
            generator = np.random.default_rng(trial)
            labels = generator.integers(0, max(out_dim, 2), size=6)
            logits, cache = forward(net, x, 0)
            grads = backward(net, cache, labels, loss_kind)

            def loss():
                return loss_and_dlogits(net.forward(x, 0)[0], labels, loss_kind)[0]

            for name, param in net.parameters().items():
                flat = param.reshape(-1)
                for i in generator.choice(flat.size, size=min(8, flat.size), replace=False):
                    original = flat[i]
                    flat[i] = original + step
                    plus = loss()
                    flat[i] = original - step
                    minus = loss()
                    flat[i] = original
                    numeric = (plus - minus) / (2 * step)
                    analytic = grads[name].reshape(-1)[i]
                    denom = max(abs(numeric) + abs(analytic), 1e-7)
                    assert abs(numeric - analytic) / denom < 1e-3, (name, i, numeric, analytic)

    def test_softmax_loss_uniform(self):
        loss, dlogits = loss_and_dlogits(np.zeros((2, 4)), np.array([0, 3]), SOFTMAX_CE)
        assert loss == pytest.approx(np.log(4))
        np.testing.assert_allclose(dlogits.sum(axis=1), 0.0, atol=1e-12)

    def test_sigmoid_loss_zero_logit(self):
        loss, _ = loss_and_dlogits(np.zeros((3, 1)), np.array([0, 1, 1]), SIGMOID_BCE)
        assert loss == pytest.approx(np.log(2))

    def test_sigmoid_needs_single_column(self):
        with pytest.raises(ConsistencyError):
            loss_and_dlogits(np.zeros((2, 3)), np.array([0, 1]), SIGMOID_BCE)

    def test_unknown_task(self):
        with pytest.raises(UnknownTaskError):
            _net().forward(_batch(), 5)

    def test_non_finite_input(self):
        x = _batch()
        x[0, 0] = np.nan
        with pytest.raises(NumericError):
            _net().forward(x, 0)

    def test_wrong_width(self):
        with pytest.raises(ConsistencyError):
            _net().forward(np.zeros((2, 100)), 0)

    def test_only_forward_path_gets_gradients(self):
        net = _net(heads=((0, 10), (1, 10)))
        _, cache = net.forward(_batch(), 1)
        grads = backward(net, cache, np.zeros(16, dtype=np.int64), SOFTMAX_CE)
        assert head_param_name(1, "weights") in grads
        assert head_param_name(0, "weights") not in grads


# ── Heads ─────────────────────────────────────────────────────


class TestHeads:
    def test_conflict(self):
        net = _net()
        with pytest.raises(HeadConflictError):
            net.add_head(0, 10)

    def test_head_input_width_tracks_body(self):
        net = _net()
        net.expand_layer(1, 3, at_task=1)
        net.add_head(1, 1)
        assert net.heads[1].weights.shape == (1, 7)
        assert net.heads[0].weights.shape == (10, 7)


# ── Node surgery ──────────────────────────────────────────────


class TestSurgery:
    def test_duplicate_preserves_function(self):
        net = _net(heads=((0, 10), (1, 10)))
        x = _batch(n=100)
        before = {t: net.forward(x, t)[0] for t in (0, 1)}
        clone = net.duplicate_node(NodeId(0, 2), at_task=2)
        after = {t: net.forward(x, t)[0] for t in (0, 1)}
        for t in (0, 1):
            np.testing.assert_allclose(after[t], before[t], rtol=0, atol=1e-12)
        assert clone == NodeId(0, 8)
        assert np.array_equal(node_vector(net, clone), node_vector(net, NodeId(0, 2)))
        assert net.hidden[0].bias[8] == net.hidden[0].bias[2]
        assert not net.hidden[1].weights[:, 8].any()
        assert NodeId(0, 2) in net.frozen
        assert net.lineage[clone].origin == NodeId(0, 2)
        assert net.lineage[clone].created_at == 2

    def test_duplicate_last_layer_pads_heads(self):
        net = _net()
        clone = net.duplicate_node(NodeId(1, 0), at_task=1)
        assert clone == NodeId(1, 4)
        assert not net.heads[0].weights[:, 4].any()

    def test_expand_preserves_function(self):
        net = _net()
        x = _batch(n=100)
        before = net.forward(x, 0)[0]
        added = net.expand_layer(0, 5, at_task=1) + net.expand_layer(1, 5, at_task=1)
        np.testing.assert_allclose(net.forward(x, 0)[0], before, rtol=0, atol=1e-12)
        assert len(added) == 10
        assert net.widths == [13, 9]
        assert net.surgery_count == 2
        assert all(net.lineage[n].origin is None for n in added)

    def test_expand_deterministic(self):
        a, b = _net(), _net()
        a.expand_layer(0, 3, at_task=1)
        b.expand_layer(0, 3, at_task=1)
        assert a.digest() == b.digest()

    def test_expand_bad_k(self):
        with pytest.raises(ConfigError):
            _net().expand_layer(0, 0)

    def test_output_nodes_rejected(self):
        with pytest.raises(UnsupportedOperationError):
            _net().duplicate_node(NodeId(2, 0), at_task=1)

    def test_stale_node(self):
        with pytest.raises(StaleNodeError):
            _net().freeze(NodeId(0, 99), at_task=1)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_surgery_keeps_shapes(self, seed):
        generator = np.random.default_rng(seed)
        net = _net(arch=(6, 5, 4), seed=seed)
        x = _batch(n=7, seed=seed)
        for step in range(25):
            op = generator.integers(3)
            task = step + 1
            if op == 0:
                layer = int(generator.integers(len(net.hidden)))
                net.duplicate_node(NodeId(layer, int(generator.integers(net.widths[layer]))), at_task=task)
            elif op == 1:
                net.expand_layer(int(generator.integers(len(net.hidden))), int(generator.integers(1, 4)), at_task=task)
            else:
                net.add_head(task, int(generator.choice([1, 10])))
            for task_id, head in net.heads.items():
                logits, _ = net.forward(x, task_id)
                assert logits.shape == (7, head.out_dim)
                assert head.weights.shape == (head.out_dim, net.widths[-1])
            for l in range(1, len(net.hidden)):
                assert net.hidden[l].in_dim == net.widths[l - 1]
            for name, mask in net.trainable_masks(task).items():
                assert mask.shape == net.parameters()[name].shape

    def test_refreeze_keeps_latest_time(self):
        net = _net()
        net.freeze(NodeId(0, 1), at_task=3)
        net.freeze(NodeId(0, 1), at_task=2)
        assert net.frozen_at[NodeId(0, 1)] == 3


# ── Freeze masks ──────────────────────────────────────────────


class TestFreezeMasks:
    def test_incoming_and_older_outgoing_pinned(self):
        net = _net()
        net.expand_layer(1, 2, at_task=1)  # units 4, 5 of layer 1 created at task 1
        net.expand_layer(1, 1, at_task=2)  # unit 6 created at task 2
        net.freeze(NodeId(0, 3), at_task=1)
        masks = net.trainable_masks()
        w0 = masks[hidden_param_name(0, "weights")]
        assert not w0[3].any() and w0[2].all()
        assert not masks[hidden_param_name(0, "bias")][3]
        w1 = masks[hidden_param_name(1, "weights")]
        assert not w1[:6, 3].any()
        assert w1[6, 3]

    def test_same_task_units_open_while_that_task_trains(self):
        net = _net()
        net.expand_layer(1, 2, at_task=1)
        net.freeze(NodeId(0, 3), at_task=1)
        during = net.trainable_masks(1)[hidden_param_name(1, "weights")]
        assert not during[:4, 3].any()
        assert during[4:, 3].all()
        after = net.trainable_masks(2)[hidden_param_name(1, "weights")]
        assert not after[:, 3].any()

    def test_last_layer_freeze_heads(self):
        net = _net(heads=((0, 10),))
        net.add_head(1, 10)
        net.freeze(NodeId(1, 0), at_task=1)
        net.add_head(2, 10)
        during = net.trainable_masks(1)
        assert not during[head_param_name(0, "weights")][:, 0].any()
        assert during[head_param_name(1, "weights")][:, 0].all()
        later = net.trainable_masks(2)
        assert not later[head_param_name(1, "weights")][:, 0].any()
        assert later[head_param_name(2, "weights")][:, 0].all()
        assert not net.trainable_masks()[head_param_name(1, "weights")][:, 0].any()

    def test_masks_cached_per_task(self):
        net = _net()
        net.freeze(NodeId(0, 0), at_task=1)
        assert net.trainable_masks(2) is net.trainable_masks(2)
        assert net.trainable_masks(1) is not net.trainable_masks(2)

    def test_gradients_masked(self):
        net = _net()
        net.freeze(NodeId(0, 0), at_task=1)
        _, cache = net.forward(_batch(), 0)
        grads = backward(net, cache, np.arange(16) % 10, SOFTMAX_CE)
        assert not grads[hidden_param_name(0, "weights")][0].any()
        assert not grads[hidden_param_name(1, "weights")][:, 0].any()



# ── revert_to ─────────────────────────────────────────────────


class TestRevert:
    def test_prefix_reset_new_entries_kept(self):
        net = _net()
        snapshot = take_snapshot(net, 0)
        added = net.expand_layer(0, 2, at_task=1)
        net.add_head(1, 10)
        net.hidden[0].weights += 1.0
        new_rows = net.hidden[0].weights[8:].copy()
        net.revert_to(snapshot)
        assert np.array_equal(net.hidden[0].weights[:8], snapshot.hidden[0].weights)
        assert np.array_equal(net.hidden[0].weights[8:], new_rows)
        assert len(added) == 2 and 1 in net.heads


# ── Snapshots ─────────────────────────────────────────────────


class TestSnapshot:
    def _busy_net(self):
        net = _net(heads=((0, 10), (1, 1)), dtype=np.float32)
        net.duplicate_node(NodeId(0, 1), at_task=1)
        net.expand_layer(1, 2, at_task=1)
        net.freeze(NodeId(1, 0), at_task=1)
        return net

    def test_round_trip_bit_exact(self, tmp_path):
        net = self._busy_net()
        snapshot = take_snapshot(net, 1)
        path = str(tmp_path / "w1.snapshot")
        save_snapshot(snapshot, path)
        loaded = load_snapshot(path)
        for name, array in snapshot.parameters().items():
            assert loaded.parameters()[name].tobytes() == array.tobytes()
        assert dict(loaded.frozen_at) == dict(snapshot.frozen_at)
        assert dict(loaded.lineage) == dict(snapshot.lineage)
        assert dict(loaded.head_created) == dict(snapshot.head_created)
        assert loaded.surgery_count == snapshot.surgery_count
        assert restore_network(loaded).digest() == net.digest()

    def test_snapshot_is_isolated(self):
        net = self._busy_net()
        snapshot = take_snapshot(net, 1)
        net.hidden[0].weights += 1.0
        assert not np.array_equal(snapshot.hidden[0].weights, net.hidden[0].weights)
        with pytest.raises(ValueError):
            snapshot.hidden[0].weights[0, 0] = 0.0

    def test_restore_masks_match(self):
        net = self._busy_net()
        restored = restore_network(take_snapshot(net, 1))
        for name, mask in net.trainable_masks().items():
            assert np.array_equal(restored.trainable_masks()[name], mask)
