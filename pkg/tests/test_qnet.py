import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eupf import qnet
from eupf.qnet import AdamState, QNetParams, TrainBatch
from oracles import finite_difference_grads, max_relative_error, naive_forward, random_gradcheck_case


def const_params(sizes, w=0.0, b=0.0):
    return QNetParams(
        [np.full((i, o), w) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.full(o, b) for o in sizes[1:]],
    )


def constant_output_net(values):
    """A net whose output ignores the state: zero weights, output bias = ``values``."""
    p = const_params((1, 3, 3, 2))
    p.biases[-1] = np.array(values, dtype=np.float64)
    return p


class TestInit:
    def test_shapes_and_zero_bias(self):
        p = qnet.init_params(np.random.default_rng(0))
        assert [w.shape for w in p.weights] == [(1, 64), (64, 64), (64, 2)]
        assert all((b == 0).all() for b in p.biases)

    def test_seeded_determinism(self):
        a = qnet.init_params(np.random.default_rng(3))
        b = qnet.init_params(np.random.default_rng(3))
        assert qnet.param_hash(a) == qnet.param_hash(b)

    def test_fan_in_bound(self):
        p = qnet.init_params(np.random.default_rng(1))
        assert np.abs(p.weights[1]).max() <= 1 / 8
        assert np.abs(p.weights[2]).max() <= 1 / 8
        assert np.abs(p.weights[0]).max() <= 1.0

    @pytest.mark.parametrize("sizes", [(2, 64, 64, 2), (1, 64, 64, 3)])
    def test_wrong_io_rejected(self, sizes):
        with pytest.raises(ValueError):
            const_params(sizes)

    def test_mismatched_layers_rejected(self):
        with pytest.raises(ValueError):
            QNetParams([np.zeros((1, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])
        with pytest.raises(ValueError):
            QNetParams([np.zeros((1, 4)), np.zeros((4, 2))], [np.zeros(3), np.zeros(2)])


class TestForward:
    def test_zero_network(self):
        assert qnet.forward(const_params((1, 64, 64, 2)), 0.7).tolist() == [0.0, 0.0]

    def test_unit_width_chain(self):
        p = const_params((1, 1, 1, 2), w=1.0)
        assert qnet.forward(p, 2.0).tolist() == [2.0, 2.0]

    def test_relu_zeroing_leaves_bias_path(self):
        p = const_params((1, 4, 4, 2), w=-1.0, b=-1.0)
        p.biases[-1] = np.array([0.25, -0.5])
        assert qnet.forward(p, 3.0).tolist() == [0.25, -0.5]

    def test_matches_naive_reference(self):
        p = qnet.init_params(np.random.default_rng(5), (1, 8, 8, 2))
        p.biases = [np.random.default_rng(6).normal(size=b.shape) for b in p.biases]
        for s in (0.0, 0.3, 1.0, -2.0):
            np.testing.assert_allclose(qnet.forward(p, s), naive_forward(p.weights, p.biases, s), rtol=1e-12)

    def test_non_finite_rejected(self):
        p = qnet.init_params(np.random.default_rng(0))
        for bad in (np.nan, np.inf):
            with pytest.raises(ValueError):
                qnet.forward(p, bad)

    def test_pure(self):
        p = qnet.init_params(np.random.default_rng(0))
        h = qnet.param_hash(p)
        for s in np.linspace(0, 1, 20):
            qnet.forward(p, s)
        assert qnet.param_hash(p) == h


class TestTdTargets:
    def test_gamma_zero_gives_rewards(self):
        net = constant_output_net([5.0, 9.0])
        assert qnet.td_targets([0.1, 0.2], [0.0, 1.0], net, 0.0).tolist() == [0.1, 0.2]

    def test_constant_target_net(self):
        net = constant_output_net([0.2, 0.5])
        assert qnet.td_targets([1.0], [0.4], net, 0.99)[0] == pytest.approx(1.495)

    def test_zero_bootstrap(self):
        net = const_params((1, 4, 4, 2))
        assert qnet.td_targets([0.3, 0.7], [0.1, 0.9], net, 0.99).tolist() == [0.3, 0.7]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            qnet.td_targets([1.0, 2.0], [0.1], constant_output_net([0, 0]), 0.9)


class TestTrainStep:
    def test_batch_validation(self):
        with pytest.raises(ValueError):
            TrainBatch([], [], [])
        with pytest.raises(ValueError):
            TrainBatch([0.1, 0.2], [0], [1.0, 1.0])
        with pytest.raises(ValueError):
            TrainBatch([0.1], [2], [1.0])

    def test_fixed_point(self):
        p = qnet.init_params(np.random.default_rng(2), (1, 8, 8, 2))
        states = np.array([0.1, 0.5, 0.9])
        actions = np.array([0, 1, 0])
        targets = qnet.forward_batch(p, states)[np.arange(3), actions]
        adam = AdamState.for_params(p)
        new, _, loss = qnet.train_step(p, adam, TrainBatch(states, actions, targets))
        assert loss == 0.0
        for a, b in zip(p.arrays(), new.arrays()):
            assert np.abs(a - b).max() <= adam.learning_rate

    def test_inputs_not_mutated(self):
        p = qnet.init_params(np.random.default_rng(2), (1, 8, 8, 2))
        adam = AdamState.for_params(p)
        h = qnet.param_hash(p)
        qnet.train_step(p, adam, TrainBatch([0.5], [1], [3.0]))
        assert qnet.param_hash(p) == h
        assert adam.step_count == 0 and all((m == 0).all() for m in adam.first_moment)

    def test_deterministic(self):
        p = qnet.init_params(np.random.default_rng(9), (1, 8, 8, 2))
        batch = TrainBatch([0.1, 0.7], [1, 0], [0.5, -0.2])
        a = qnet.train_step(p, AdamState.for_params(p), batch)
        b = qnet.train_step(p, AdamState.for_params(p), batch)
        assert qnet.param_hash(a[0]) == qnet.param_hash(b[0]) and a[2] == b[2]

    def test_moment_shape_mismatch_rejected(self):
        p = qnet.init_params(np.random.default_rng(0), (1, 8, 8, 2))
        other = AdamState.for_params(qnet.init_params(np.random.default_rng(0), (1, 4, 4, 2)))
        with pytest.raises(ValueError):
            qnet.train_step(p, other, TrainBatch([0.5], [0], [1.0]))

    def test_divergence_detected(self):
        p = qnet.init_params(np.random.default_rng(0), (1, 4, 4, 2))
        with pytest.raises(qnet.TrainingDivergenceError):
            qnet.train_step(p, AdamState.for_params(p), TrainBatch([0.5], [0], [np.inf]))

    def test_single_sample_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(123)
        weights, biases, states, actions, targets = random_gradcheck_case(rng)
        states, actions, targets = states[:1], actions[:1], targets[:1]
        p = QNetParams(weights, biases)
        _, grads = qnet.loss_and_grads(p, TrainBatch(states, actions, targets))
        numeric = finite_difference_grads(weights, biases, states, actions, targets, h=1e-3)
        assert max_relative_error(grads, numeric) <= 1e-4

    def test_converges_on_fixed_sample(self):
        p = qnet.init_params(np.random.default_rng(4))
        adam = AdamState.for_params(p)
        batch = TrainBatch([0.3], [1], [2.0])
        gaps = []
        for _ in range(500):
            gaps.append(abs(qnet.forward(p, 0.3)[1] - 2.0))
            p, adam, loss = qnet.train_step(p, adam, batch)
            assert loss >= 0
        # Adam overshoots early; after burn-in the worst gap per 50-step block keeps shrinking
        blocks = [max(gaps[k:k + 50]) for k in range(150, 500, 50)]
        assert all(b2 < b1 for b1, b2 in zip(blocks, blocks[1:]))
        assert gaps[-1] < 1e-6

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_loss_non_negative_and_finite(self, seed):
        rng = np.random.default_rng(seed)
        p = qnet.init_params(rng, (1, 8, 8, 2))
        n = int(rng.integers(1, 10))
        batch = TrainBatch(rng.uniform(0, 1, n), rng.integers(0, 2, n), rng.uniform(-5, 5, n))
        new, adam, loss = qnet.train_step(p, AdamState.for_params(p), batch)
        assert loss >= 0 and new.is_finite() and adam.step_count == 1


class TestSyncTarget:
    def test_copy_semantics(self):
        p = qnet.init_params(np.random.default_rng(0))
        t = qnet.sync_target(p)
        assert qnet.forward(p, 0.4).tolist() == qnet.forward(t, 0.4).tolist()
        assert all(a is not b for a, b in zip(p.arrays(), t.arrays()))

    def test_independent_of_online_training(self):
        p = qnet.init_params(np.random.default_rng(0))
        t = qnet.sync_target(p)
        before = qnet.forward(t, 0.4).tolist()
        adam = AdamState.for_params(p)
        for _ in range(10):
            p, adam, _ = qnet.train_step(p, adam, TrainBatch([0.4], [0], [5.0]))
        assert qnet.forward(t, 0.4).tolist() == before
        p.weights[0][0, 0] = 99.0
        assert qnet.forward(t, 0.4).tolist() == before

    def test_two_syncs_equal(self):
        p = qnet.init_params(np.random.default_rng(0))
        assert qnet.param_hash(qnet.sync_target(p)) == qnet.param_hash(qnet.sync_target(p))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = qnet.init_params(np.random.default_rng(8))
        path = tmp_path / "q.json"
        qnet.save_params(p, path, episode=12)
        loaded, extra = qnet.load_params(path)
        assert qnet.param_hash(loaded) == qnet.param_hash(p)
        assert extra == {"episode": 12}

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "q.json"
        data = qnet.params_to_dict(qnet.init_params(np.random.default_rng(0)))
        data["magic"] = "something-else"
        path.write_text(json.dumps(data))
        with pytest.raises(ValueError):
            qnet.load_params(path)

    def test_rejects_shape_mismatch(self, tmp_path):
        path = tmp_path / "q.json"
        qnet.save_params(qnet.init_params(np.random.default_rng(0), (1, 4, 4, 2)), path)
        with pytest.raises(ValueError):
            qnet.load_params(path)
        data = qnet.params_to_dict(qnet.init_params(np.random.default_rng(0)))
        data["layers"][1]["shape"] = [64, 32]
        path.write_text(json.dumps(data))
        with pytest.raises(ValueError):
            qnet.load_params(path)
