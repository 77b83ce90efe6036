import numpy as np
import pytest

from mcsched.bound import latency_rate_dqn, latency_rate_exact
from mcsched.dqn import DqnConfig, RateLatencyMdp, ReplayBuffer, dqn_loss
from mcsched.nn import DenseNet
from gradcheck import max_relative_error, numeric_grads

FAST = DqnConfig(train_steps=8000, eval_slots=5000, eps_decay_steps=4000)


class TestLoss:
    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = DenseNet([5, 8, 2], "linear", "tanh", rng)
        target = DenseNet([5, 8, 2], "linear", "tanh", rng)
        batch = (rng.normal(size=(16, 5)), rng.integers(0, 2, 16), rng.normal(size=16),
                 rng.normal(size=(16, 5)))
        _, grads = dqn_loss(net, target, batch, 0.95)
        numeric = numeric_grads(lambda: dqn_loss(net, target, batch, 0.95)[0], [net])
        assert max_relative_error(grads, numeric) < 1e-5

    def test_target_net_gets_no_gradient(self):
        rng = np.random.default_rng(0)
        net = DenseNet([3, 4, 2], "linear", "tanh", rng)
        target = net.copy()
        before = [p.copy() for p in target.params]
        batch = (rng.normal(size=(4, 3)), np.array([0, 1, 0, 1]), np.ones(4), rng.normal(size=(4, 3)))
        _, grads = dqn_loss(net, target, batch, 0.9)
        net.optimizer_step(grads, 0.1)
        assert all(np.array_equal(a, b) for a, b in zip(before, target.params))


class TestReplay:
    def test_wraps_around(self):
        buf = ReplayBuffer(3, 1)
        for i in range(5):
            buf.add([i], 0, float(i), [i])
        assert buf.size == 3
        assert sorted(buf.r.tolist()) == [2.0, 3.0, 4.0]


class TestRateLatencyMdp:
    def test_cycle_counter(self):
        mdp = RateLatencyMdp(2.0, np.ones(4), 0.5, 1.0, np.random.default_rng(0))
        assert mdp.z == 1.0
        mdp.step(0)
        assert mdp.z == 2.0
        reward, latency = mdp.step(1)
        assert mdp.z == 1.0
        assert reward == -latency

    def test_off_target_cycle_is_penalized(self):
        mdp = RateLatencyMdp(2.0, np.ones(4), 0.25, 2.0, np.random.default_rng(0))
        reward, latency = mdp.step(1)
        assert reward == pytest.approx(-latency - 2.0 * (1 - 4) ** 2)

    def test_no_arrivals(self):
        mdp = RateLatencyMdp(0.0, np.ones(4), 0.5, 1.0, np.random.default_rng(0))
        assert all(mdp.step(a)[1] == 0 for a in (0, 1, 0, 0))


class TestLatencyRateDqn:
    def test_rate_one_agrees_with_threshold(self):
        res = latency_rate_dqn(2.0, np.ones(4), 1.0, FAST)
        assert res.reliable
        assert res.f_value == pytest.approx(latency_rate_exact(2.0, 1.0), rel=0.05)

    def test_linear_penalty_rate_one(self):
        # every served request has waited exactly one slot
        res = latency_rate_dqn(2.0, np.arange(1.0, 5.0), 1.0, FAST)
        assert res.f_value == pytest.approx(-2.0, rel=0.05)

    def test_zero_arrivals(self):
        res = latency_rate_dqn(0.0, np.arange(1.0, 5.0), 0.4, DqnConfig(train_steps=600, eval_slots=500))
        assert res.f_value == 0.0

    def test_flags_missed_rate(self):
        res = latency_rate_dqn(2.0, np.ones(4), 0.3, FAST)
        assert res.reliable == (abs(res.achieved_rate - 0.3) <= 0.03)

    def test_rejects_rate_above_one(self):
        with pytest.raises(ValueError):
            latency_rate_dqn(2.0, np.ones(4), 1.2, FAST)
