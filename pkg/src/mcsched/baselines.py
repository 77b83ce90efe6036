"""Classical comparison policies: round-robin, threshold stopping, RVI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvState, PoissonSampler


class NotApplicable(ValueError):
    """A baseline was asked to solve a scenario outside its assumptions."""


# --------------------------------------------------------------------------
# round robin


def round_robin(state: EnvState, cycle_position: int) -> tuple[np.ndarray, int]:
    """Hand the next messages in cyclic order to the free channels.

    Returns the joint action and the advanced cycle position.
    """
    n = state.request_matrix.shape[0]
    m = state.channel_avail.size
    action = np.zeros(m, dtype=np.int64)
    used = set()
    pos = cycle_position
    for ch in range(m):
        if state.channel_avail[ch] > 0 or len(used) == n:
            continue
        msg = pos % n + 1
        pos += 1
        action[ch] = msg
        used.add(msg)
    return action, pos


class RoundRobin:
    def __init__(self):
        self.position = 0

    def __call__(self, state: EnvState, rng=None) -> np.ndarray:
        action, self.position = round_robin(state, self.position)
        return action


# --------------------------------------------------------------------------
# optimal stopping (one message, one channel, unit durations, unit penalty)


@dataclass
class ThresholdPolicy:
    """Multicast message 1 on channel 0 once the buffered count exceeds ``threshold``.

    ``threshold = -1`` multicasts every slot.
    """

    threshold: int
    value: float = float("nan")
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.threshold < -1:
            raise ValueError("threshold must be >= -1")

    def __call__(self, state: EnvState, rng=None) -> np.ndarray:
        action = np.zeros(state.channel_avail.size, dtype=np.int64)
        if state.channel_avail[0] == 0 and state.request_matrix[0].sum() > self.threshold:
            action[0] = 1
        return action


def simulate_threshold(
    threshold: int,
    arrivals: list,
    slot_min_gain: list,
    tradeoff_v: float,
    energy_const: float,
    duration: int,
    max_gain: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot (reward, latency) of a threshold rule on pre-drawn randomness.

    ``slot_min_gain[t]`` is the worst gain among slot t's arrivals (inf if none).
    """
    n = len(arrivals)
    rewards = np.empty(n)
    latency = np.empty(n)
    q = 0
    g = math.inf
    cost = tradeoff_v * energy_const * duration
    for t in range(n):
        r = -q
        latency[t] = q
        if q > threshold:
            r -= cost / (g if g != math.inf else max_gain)
            q = 0
            g = math.inf
        rewards[t] = r
        q += arrivals[t]
        if slot_min_gain[t] < g:
            g = slot_min_gain[t]
    return rewards, latency


def draw_single_message_randomness(rate: float, gain_support, n_slots: int, seed: int):
    """Common random numbers for threshold sweeps: arrivals and per-slot worst gains."""
    from .env import RngStreams, sample_min_gains

    rng = RngStreams.from_seed(seed)
    sampler = PoissonSampler(np.array([rate]))
    u = rng.arrivals.random(n_slots)
    arrivals = (u[:, None] >= sampler._table[0][None, :]).sum(axis=1)
    gains = sample_min_gains(arrivals, 1, np.asarray(gain_support, float), rng.gains)[:, 0]
    return arrivals.tolist(), gains.tolist()


def is_unimodal(values, tol: float = 0.0) -> bool:
    """Rises then falls, allowing dips up to ``tol`` against the trend."""
    v = np.asarray(values, dtype=float)
    peak = int(np.argmax(v))
    rising = np.all(np.diff(v[: peak + 1]) >= -tol)
    falling = np.all(np.diff(v[peak:]) <= tol)
    return bool(rising and falling)


def solve_optimal_stopping(
    rate: float,
    tradeoff_v: float,
    energy_const: float = 500.0,
    duration: int = 1,
    gain_support=tuple(range(100, 111)),
    penalty: float = 1.0,
    q_max: int | None = None,
    n_slots: int = 1_000_000,
    seed: int = 0,
) -> ThresholdPolicy:
    """Best threshold by a renewal-reward Monte Carlo sweep over ``-1..q_max``.

    All candidates share the same arrival and gain draws.
    """
    if duration != 1 or penalty != 1:
        raise NotApplicable("optimal stopping needs unit duration and unit penalty")
    if q_max is None:
        q_max = int(6 * rate + 10)
    gain_support = np.asarray(gain_support, dtype=float)
    arrivals, gains = draw_single_message_randomness(rate, gain_support, n_slots, seed)
    sweep = {}
    for h in range(-1, q_max + 1):
        rewards, _ = simulate_threshold(
            h, arrivals, gains, tradeoff_v, energy_const, duration, gain_support[-1]
        )
        sweep[h] = float(rewards.mean())
    best = max(sweep, key=sweep.get)
    if best == q_max:
        raise NotApplicable(f"optimum sits at the sweep edge q_max={q_max}; enlarge the sweep")
    return ThresholdPolicy(best, sweep[best], sweep)


# --------------------------------------------------------------------------
# relative value iteration (two messages, one channel, unit durations)


@dataclass
class TabularPolicy:
    cap: int
    table: np.ndarray       # (cap+1, cap+1) actions in {0, 1, 2}
    gain: float             # long-run average reward
    values: np.ndarray      # relative values, reference state (0, 0)
    iterations: int = 0

    @property
    def n_states(self) -> int:
        return self.table.size

    def __call__(self, state: EnvState, rng=None) -> np.ndarray:
        counts = np.minimum(state.request_matrix.sum(axis=1), self.cap)
        action = np.zeros(state.channel_avail.size, dtype=np.int64)
        if state.channel_avail[0] == 0:
            action[0] = self.table[counts[0], counts[1]]
        return action

    def to_csv(self) -> str:
        lines = ["count_1,count_2,action"]
        for i in range(self.cap + 1):
            for j in range(self.cap + 1):
                lines.append(f"{i},{j},{int(self.table[i, j])}")
        return "\n".join(lines) + "\n"


def truncated_poisson_kernel(rate: float, cap: int) -> np.ndarray:
    """K[x, y] = P(min(x + A, cap) = y) for A ~ Poisson(rate)."""
    k = np.arange(cap + 1)
    logpmf = k * math.log(rate) - rate - np.array([math.lgamma(i + 1) for i in k]) \
        if rate > 0 else np.where(k == 0, 0.0, -np.inf)
    pmf = np.exp(logpmf)
    kernel = np.zeros((cap + 1, cap + 1))
    for x in range(cap + 1):
        kernel[x, x:cap] = pmf[: cap - x]
        kernel[x, cap] = max(0.0, 1.0 - kernel[x, :cap].sum())
    return kernel


def capped_chain(rates, cap: int, penalty=(1.0, 1.0), multicast_energy=(0.0, 0.0),
                 tradeoff_v: float = 0.0):
    """Per-action transition matrices and costs on the (cap+1)^2 count grid.

    Action n resets message n's count to that slot's arrivals.
    """
    k1 = truncated_poisson_kernel(rates[0], cap)
    k2 = truncated_poisson_kernel(rates[1], cap)
    reset1 = np.tile(k1[0], (cap + 1, 1))
    reset2 = np.tile(k2[0], (cap + 1, 1))
    transitions = [np.kron(k1, k2), np.kron(reset1, k2), np.kron(k1, reset2)]
    x1, x2 = np.meshgrid(np.arange(cap + 1), np.arange(cap + 1), indexing="ij")
    base = (penalty[0] * x1 + penalty[1] * x2).ravel().astype(float)
    costs = [base, base + tradeoff_v * multicast_energy[0], base + tradeoff_v * multicast_energy[1]]
    return transitions, costs


def _greedy(q_values: np.ndarray, tie_tol: float) -> np.ndarray:
    best = q_values.min(axis=0)
    within = q_values <= best + tie_tol
    return np.argmax(within, axis=0)


def rvi_solve(
    rate_1: float,
    rate_2: float,
    cap: int,
    tradeoff_v: float = 0.0,
    penalty=(1.0, 1.0),
    multicast_energy=(0.0, 0.0),
    tol: float = 1e-9,
    max_iter: int = 100_000,
    tie_tol: float = 1e-9,
) -> TabularPolicy:
    """Relative value iteration for the capped two-message, one-channel chain.

    Minimizes average cost (latency plus weighted energy); the returned
    ``gain`` is the corresponding average reward, i.e. minus that cost.
    Ties go to the lowest action index.
    """
    transitions, costs = capped_chain((rate_1, rate_2), cap, penalty, multicast_energy, tradeoff_v)
    n_states = (cap + 1) ** 2
    h = np.zeros(n_states)
    ref = 0
    for it in range(1, max_iter + 1):
        q_values = np.stack([c + p @ h for c, p in zip(costs, transitions)])
        th = q_values.min(axis=0)
        diff = th - h
        span = diff.max() - diff.min()
        h = th - th[ref]
        if span < tol:
            break
    else:
        raise RuntimeError(f"relative value iteration did not converge in {max_iter} iterations")
    q_values = np.stack([c + p @ h for c, p in zip(costs, transitions)])
    avg_cost = float(q_values.min(axis=0)[ref] - h[ref])
    table = _greedy(q_values, tie_tol).reshape(cap + 1, cap + 1)
    return TabularPolicy(cap, table, -avg_cost, h.reshape(cap + 1, cap + 1), it)


def extract_switch_curve(policy: TabularPolicy) -> list[tuple[int, int]]:
    """For each count_1, the smallest count_2 at which the policy serves message 2."""
    curve = []
    for i in range(policy.cap + 1):
        hits = np.flatnonzero(policy.table[i] == 2)
        if hits.size:
            curve.append((i, int(hits[0])))
    return curve


def switch_curve_csv(curve) -> str:
    return "count_1,switch_count_2\n" + "".join(f"{i},{j}\n" for i, j in curve)


# --------------------------------------------------------------------------
# unconstrained multi-agent sampling (ablation)


def unconstrained_sample(policies, rng: np.random.Generator) -> np.ndarray:
    """Each agent samples its own masked distribution independently."""
    p = np.array(policies, dtype=float, ndmin=2)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((u >= cdf).sum(axis=1), p.shape[1] - 1).astype(np.int64)


class UnconstrainedPolicy:
    """Masked actors sampled independently; duplicate starts are possible."""

    def __init__(self, agents):
        from .trainer import DePolicy

        self._dists = DePolicy(agents).distributions

    def __call__(self, state: EnvState, rng) -> np.ndarray:
        return unconstrained_sample(self._dists(state), rng.sample)
