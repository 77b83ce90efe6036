import numpy as np
import pytest

from mcsched.baselines import (
    NotApplicable, RoundRobin, ThresholdPolicy, capped_chain, extract_switch_curve,
    is_unimodal, round_robin, rvi_solve, solve_optimal_stopping, truncated_poisson_kernel,
    unconstrained_sample,
)
from mcsched.bound import threshold_renewal_exact
from mcsched.env import EnvState, MulticastEnv, make_config
from mcsched.trainer import evaluate_policy
from oracles import brute_force_two_message_gain, capped_kernel


def state(n, avail):
    return EnvState(np.zeros((n, 4), int), np.array(avail), np.full((n, len(avail)), 110.0))


class TestRoundRobin:
    def test_cycles_messages(self):
        actions = []
        pos = 0
        for _ in range(4):
            a, pos = round_robin(state(3, [0]), pos)
            actions.append(int(a[0]))
        assert actions == [1, 2, 3, 1]

    def test_skips_busy_channels(self):
        a, pos = round_robin(state(3, [1, 0, 0]), 0)
        assert a.tolist() == [0, 1, 2] and pos == 2

    def test_more_channels_than_messages(self):
        a, _ = round_robin(state(2, [0, 0, 0]), 0)
        assert a.tolist() == [1, 2, 0]

    def test_feasible_on_long_run(self):
        cfg = make_config([3.0, 4.0, 5.0], n_channels=2, duration=[[1, 3], [2, 2], [4, 1]])
        evaluate_policy(RoundRobin(), MulticastEnv(cfg, seed=1), 3000)


class TestOptimalStopping:
    def test_threshold_minus_one_always_multicasts(self):
        assert ThresholdPolicy(-1)(state(1, [0])).tolist() == [1]
        assert ThresholdPolicy(-1)(state(1, [1])).tolist() == [0]

    def test_rejects_non_unit_duration(self):
        with pytest.raises(NotApplicable):
            solve_optimal_stopping(2.0, 1.0, duration=2)

    def test_v_zero_multicasts_every_slot(self):
        pol = solve_optimal_stopping(2.0, 0.0, n_slots=20000)
        assert pol.threshold == -1
        assert pol.value == pytest.approx(-2.0, abs=0.05)

    def test_sweep_is_unimodal(self):
        pol = solve_optimal_stopping(2.0, 1.0, n_slots=200_000)
        assert is_unimodal(list(pol.sweep.values()), tol=0.01)

    def test_latency_part_matches_renewal(self):
        # with V=0 the latency of a threshold rule follows the exact cycle DP
        pol = solve_optimal_stopping(2.0, 0.0, n_slots=200_000, seed=3)
        for h in (2, 4):
            cyc = threshold_renewal_exact(2.0, h)
            assert -pol.sweep[h] == pytest.approx(cyc.latency / cyc.length, rel=0.02)

    def test_unimodal_helper(self):
        assert is_unimodal([1, 3, 5, 4, 2])
        assert not is_unimodal([1, 3, 1, 3, 1])


class TestRvi:
    def test_kernel_matches_oracle(self):
        assert np.allclose(truncated_poisson_kernel(2.5, 6), capped_kernel(2.5, 6))

    def test_rows_are_stochastic(self):
        transitions, _ = capped_chain((2.0, 3.0), 5)
        for p in transitions:
            assert np.allclose(p.sum(axis=1), 1.0)

    def test_matches_brute_force_on_small_cap(self):
        best = brute_force_two_message_gain(2.0, 3.0, 3)
        assert -rvi_solve(2.0, 3.0, 3).gain == pytest.approx(best, rel=1e-6)

    def test_state_count(self):
        assert rvi_solve(2.0, 7.0, 15).n_states == 256

    @pytest.mark.parametrize("rates,cap", [((2.0, 3.0), 10), ((2.0, 7.0), 15)])
    def test_switch_curve_monotone(self, rates, cap):
        curve = extract_switch_curve(rvi_solve(*rates, cap))
        thresholds = [j for _, j in curve]
        assert thresholds == sorted(thresholds)

    def test_heavier_message_served_more_often(self):
        # message 2 refills faster, so its count bar rises, yet it is
        # multicast a larger share of slots
        shares = []
        for rates in [(2.0, 3.0), (2.0, 7.0)]:
            cfg = make_config(list(rates), tradeoff_v=0.0)
            m = evaluate_policy(rvi_solve(*rates, 15), MulticastEnv(cfg, seed=4), 20_000)
            shares.append(m.rates[1, 0])
        assert shares[1] > shares[0]

    def test_simulated_gain_matches(self):
        pol = rvi_solve(2.0, 3.0, 10)
        cfg = make_config([2.0, 3.0], tradeoff_v=0.0)
        m = evaluate_policy(pol, MulticastEnv(cfg, seed=2), 50_000)
        assert m.avg_reward == pytest.approx(pol.gain, abs=4 * m.reward_se + 0.02)

    def test_csv(self):
        text = rvi_solve(2.0, 3.0, 2).to_csv()
        assert text.splitlines()[0] == "count_1,count_2,action"
        assert len(text.splitlines()) == 10


class TestUnconstrained:
    def test_can_duplicate(self):
        rng = np.random.default_rng(0)
        p = [[0.0, 1.0, 0.0]] * 2
        assert unconstrained_sample(p, rng).tolist() == [1, 1]
