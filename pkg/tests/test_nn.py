import numpy as np
import pytest

from mcsched.nn import CheckpointError, DenseNet, StackedForward, load_weights, save_weights
from gradcheck import max_relative_error, numeric_grads


def net(head="linear", activation="tanh", sizes=(5, 7, 6, 3), seed=0):
    return DenseNet(list(sizes), head, activation, np.random.default_rng(seed))


class TestForward:
    def test_softmax_head_is_distribution(self):
        out = net("softmax")(np.random.default_rng(1).normal(size=(20, 5)) * 50)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out > 0)

    def test_single_vector_matches_batch(self):
        n = net()
        x = np.random.default_rng(2).normal(size=(4, 5))
        single = np.array([n.forward(row)[0] for row in x])
        assert np.allclose(single, n.forward(x)[0])
        assert np.allclose(n(x), n.forward(x)[0])

    def test_wrong_width(self):
        with pytest.raises(ValueError):
            net().forward(np.zeros(4))

    def test_bad_layer_sizes(self):
        with pytest.raises(ValueError):
            DenseNet([3, 0, 2])

    def test_stacked_matches_individual(self):
        nets = [net("softmax", seed=s) for s in range(4)]
        x = np.random.default_rng(3).normal(size=(4, 5))
        stacked = StackedForward(nets)(x)
        for k in range(4):
            assert np.allclose(stacked[k], nets[k](x[k]), atol=1e-14)

    def test_stacked_sees_updates(self):
        nets = [net(seed=s) for s in range(2)]
        stacked = StackedForward(nets)
        x = np.ones((2, 5))
        stacked(x)
        _, tape = nets[1].forward(x[1])
        nets[1].optimizer_step(nets[1].backward(tape, np.ones(3)), 0.1)
        assert np.allclose(stacked(x)[1], nets[1](x[1]))


class TestBackward:
    @pytest.mark.parametrize("head", ["linear", "softmax"])
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_against_finite_differences(self, head, activation):
        rng = np.random.default_rng(4)
        n = net(head, activation, seed=5)
        x = rng.normal(size=(6, 5))
        w = rng.normal(size=(6, 3))

        def loss():
            return float(np.sum(w * n.forward(x)[0]))

        _, tape = n.forward(x)
        analytic = n.backward(tape, w)
        assert max_relative_error(analytic, numeric_grads(loss, [n])) < 1e-6

    def test_stale_tape_rejected(self):
        n = net()
        _, tape = n.forward(np.zeros(5))
        grads = n.backward(tape, np.ones(3))
        n.optimizer_step(grads, 1e-3)
        with pytest.raises(RuntimeError):
            n.backward(tape, np.ones(3))


class TestAdam:
    def test_reduces_quadratic_loss(self):
        n = net(sizes=(3, 8, 1))
        rng = np.random.default_rng(6)
        x = rng.normal(size=(64, 3))
        y = x @ np.array([1.0, -2.0, 0.5])
        losses = []
        for _ in range(300):
            out, tape = n.forward(x)
            err = out[:, 0] - y
            losses.append(float(np.mean(err ** 2)))
            n.optimizer_step(n.backward(tape, (2 * err / err.size)[:, None]), 1e-2)
        assert losses[-1] < 0.1 * losses[0]

    def test_first_step_size_is_learning_rate(self):
        # bias-corrected Adam moves each parameter by about lr on step one
        n = net(sizes=(2, 1))
        before = n.weights[0].copy()
        _, tape = n.forward(np.array([1.0, -1.0]))
        n.optimizer_step(n.backward(tape, np.ones(1)), 0.01)
        assert np.allclose(np.abs(n.weights[0] - before), 0.01, rtol=1e-4)


class TestCheckpoints:
    def test_round_trip_is_exact(self):
        n = net("softmax")
        _, tape = n.forward(np.ones(5))
        n.optimizer_step(n.backward(tape, np.ones(3)), 1e-3)
        back = load_weights(save_weights(n))
        for a, b in zip(n.params, back.params):
            assert np.array_equal(a, b)
        assert back.adam.t == 1
        assert all(np.array_equal(a, b) for a, b in zip(n.adam.m, back.adam.m))

    def test_schema_mismatch(self):
        doc = save_weights(net()).replace('"schema_version": 1', '"schema_version": 99')
        with pytest.raises(CheckpointError):
            load_weights(doc)

    def test_garbage(self):
        with pytest.raises(CheckpointError):
            load_weights("not json")
