"""Performance upper bound: capacity accounting, latency-rate curves, rate allocation.

The bound relaxes the busy-channel rule to per-channel occupancy budgets,
drops the duplicate-start rule, scores latency by the best achievable penalty
at each multicast rate and energy by its best-gain minimum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog

from .dqn import DqnConfig, DqnResult, evaluate_dqn, train_dqn
from .env import EnvConfig


class CapacityReport(NamedTuple):
    ok: bool
    loads: np.ndarray          # per channel: sum_n starts * duration over the whole trace
    worst_excess: float        # max over prefixes of occupied-within-prefix minus prefix length
    first_violation: int | None


def check_capacity(actions, duration_table) -> CapacityReport:
    """Occupancy check over every prefix of an action trace.

    A multicast started at slot s with duration d occupies slots s..s+d-1;
    only the part falling inside a prefix counts against that prefix.
    """
    acts = np.asarray(actions, dtype=np.int64)
    if acts.ndim == 1:
        acts = acts[:, None]
    dur = np.asarray(duration_table, dtype=np.int64)
    horizon, n_ch = acts.shape
    busy = np.zeros((horizon + int(dur.max()) + 1, n_ch))
    loads = np.zeros(n_ch)
    t_idx, ch_idx = np.nonzero(acts > 0)
    d = dur[acts[t_idx, ch_idx] - 1, ch_idx]
    np.add.at(busy, (t_idx, ch_idx), 1.0)
    np.add.at(busy, (t_idx + d, ch_idx), -1.0)
    np.add.at(loads, ch_idx, d)
    occupancy = np.cumsum(np.cumsum(busy, axis=0)[:horizon], axis=0)
    excess = occupancy - np.arange(1, horizon + 1)[:, None]
    bad = np.flatnonzero((excess > 0).any(axis=1))
    worst = float(excess.max()) if horizon else 0.0
    return CapacityReport(bad.size == 0, loads, worst, int(bad[0]) + 1 if bad.size else None)


def min_energy_table(duration_table, energy_const, max_gain: float) -> np.ndarray:
    """Energy of each (message, channel) multicast at the best possible gain."""
    return np.asarray(duration_table, float) * np.asarray(energy_const, float) / max_gain


# --------------------------------------------------------------------------
# single-message threshold renewal cycles


def _poisson_pmf(rate: float, kmax: int) -> np.ndarray:
    k = np.arange(kmax + 1)
    if rate == 0:
        return (k == 0).astype(float)
    return np.exp(k * math.log(rate) - rate - np.array([math.lgamma(i + 1) for i in k]))


def inverse_min_gain_moments(gain_support, kmax: int) -> np.ndarray:
    """E[1 / min of k i.i.d. uniform gains] for k = 0..kmax (k = 0 means the max gain)."""
    s = np.sort(np.asarray(gain_support, dtype=float))
    K = s.size
    out = np.empty(kmax + 1)
    out[0] = 1.0 / s[-1]
    j = np.arange(K)
    for k in range(1, kmax + 1):
        surv = ((K - j) / K) ** k          # P(min >= s_j)
        pmf = surv - np.append(surv[1:], 0.0)
        out[k] = float(np.sum(pmf / s))
    return out


class CycleStats(NamedTuple):
    length: float    # expected slots between multicasts
    latency: float   # expected summed buffered count over a cycle
    energy: float    # expected multicast energy per cycle (zero if not requested)


def threshold_renewal_exact(
    rate: float, threshold: int, energy_per_inverse_gain: float = 0.0, gain_support=None,
    tail: float = 1e-15,
) -> CycleStats:
    """Exact cycle moments of "multicast once the buffered count exceeds threshold".

    The cycle starts right after a multicast, with one slot's arrivals
    buffered. ``threshold = -1`` multicasts every slot.
    """
    kmax = int(rate + 40 * math.sqrt(rate + 1) + 40 + max(threshold, 0))
    pmf = _poisson_pmf(rate, kmax)
    pmf = pmf[: max(1, np.searchsorted(np.cumsum(pmf), 1 - tail) + 1)]
    top = max(threshold, 0) + pmf.size + 1
    inv_g = (inverse_min_gain_moments(gain_support, top) if energy_per_inverse_gain
             else np.zeros(top + 1))
    L = np.zeros(top + 1)
    C = np.zeros(top + 1)
    E = np.zeros(top + 1)
    stop = np.arange(top + 1) > threshold
    L[stop] = 1.0
    C[stop] = np.arange(top + 1)[stop]
    E[stop] = energy_per_inverse_gain * inv_g[stop]
    p0 = pmf[0]
    for q in range(max(threshold, -1), -1, -1):
        ks = np.arange(1, pmf.size)
        nxt = np.minimum(q + ks, top)
        w = pmf[1:]
        L[q] = (1.0 + w @ L[nxt]) / (1.0 - p0)
        C[q] = (q + w @ C[nxt]) / (1.0 - p0)
        E[q] = (w @ E[nxt]) / (1.0 - p0)
    start = np.minimum(np.arange(pmf.size), top)
    return CycleStats(float(pmf @ L[start]), float(pmf @ C[start]), float(pmf @ E[start]))


class ThresholdMix(NamedTuple):
    low: int        # threshold used with probability ``weight``
    high: int
    weight: float


def _threshold_mix(rate: float, target_rate: float, cycle) -> ThresholdMix:
    target_len = 1.0 / target_rate
    h = -1
    prev = cycle(h)
    if target_len <= prev.length + 1e-12:
        return ThresholdMix(-1, -1, 1.0)
    while True:
        cur = cycle(h + 1)
        if cur.length >= target_len:
            w = (cur.length - target_len) / (cur.length - prev.length)
            return ThresholdMix(h, h + 1, float(w))
        h += 1
        prev = cur
        if h > 100_000:
            raise RuntimeError("target rate too small for the threshold search")


def latency_rate_exact(rate: float, target_rate: float) -> float:
    """Best negative latency per slot at ``target_rate`` multicasts per slot (unit penalty)."""
    if not 0 < target_rate <= 1:
        raise ValueError("target_rate must lie in (0, 1]")
    if rate == 0:
        return 0.0
    cache = {}

    def cycle(h):
        if h not in cache:
            cache[h] = threshold_renewal_exact(rate, h)
        return cache[h]

    mix = _threshold_mix(rate, target_rate, cycle)
    lo, hi = cycle(mix.low), cycle(mix.high)
    length = mix.weight * lo.length + (1 - mix.weight) * hi.length
    cost = mix.weight * lo.latency + (1 - mix.weight) * hi.latency
    return -cost / length


def latency_rate_threshold(
    rate: float, target_rate: float, horizon: int = 1_000_000, seed: int = 0,
    arrivals: np.ndarray | None = None,
) -> float:
    """Monte Carlo renewal-reward value of the rate-matched threshold policy.

    The two bracketing thresholds are mixed per cycle so the expected cycle
    length is exactly ``1 / target_rate``. Passing ``arrivals`` reuses the
    same draws across rates.
    """
    if not 0 < target_rate <= 1:
        raise ValueError("target_rate must lie in (0, 1]")
    if rate == 0:
        return 0.0
    mix = _threshold_mix(rate, target_rate, lambda h: threshold_renewal_exact(rate, h))
    rng = np.random.default_rng(seed)
    if arrivals is None:
        arrivals = rng.poisson(rate, size=horizon)
    coins = (rng.random(horizon) < mix.weight).tolist()
    arr = np.asarray(arrivals)[:horizon].tolist()
    q = 0
    total = 0
    h = mix.low if coins[0] else mix.high
    for t, a in enumerate(arr):
        total += q
        if q > h:
            q = 0
            h = mix.low if coins[t] else mix.high
        q += a
    return -total / len(arr)


def latency_rate_dqn(
    rate: float, penalty_fn, target_rate: float, config: DqnConfig = DqnConfig()
) -> DqnResult:
    """Learned latency-rate value for a general per-age penalty."""
    if not 0 < target_rate <= 1:
        raise ValueError("target_rate must lie in (0, 1]")
    net = train_dqn(rate, penalty_fn, target_rate, config)
    return evaluate_dqn(net, rate, penalty_fn, target_rate, config)


# --------------------------------------------------------------------------
# curves and allocation


@dataclass
class LatencyRateCurve:
    """f sampled on a rate grid for one message."""

    rates: np.ndarray
    values: np.ndarray

    def is_monotone(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.values) >= -tol))

    def concave_envelope(self) -> tuple[np.ndarray, np.ndarray]:
        """Upper concave hull of the samples (vertices)."""
        pts = []
        for x, y in zip(self.rates, self.values):
            while len(pts) >= 2:
                (x1, y1), (x2, y2) = pts[-2], pts[-1]
                if (y2 - y1) * (x - x1) <= (y - y1) * (x2 - x1):
                    pts.pop()
                else:
                    break
            pts.append((x, y))
        xs, ys = zip(*pts)
        return np.array(xs), np.array(ys)

    def __call__(self, r) -> np.ndarray:
        xs, ys = self.concave_envelope()
        return np.interp(r, xs, ys)

    def to_csv(self) -> str:
        return "rate,f\n" + "".join(f"{r!r},{v!r}\n" for r, v in zip(self.rates, self.values))


def rate_grid(grid_step: float) -> np.ndarray:
    n = int(round(1.0 / grid_step))
    return np.arange(1, n + 1) * (1.0 / n)


def build_curves(config: EnvConfig, grid_step: float = 0.02, method: str = "exact",
                 dqn_config: DqnConfig | None = None, horizon: int = 1_000_000,
                 seed: int = 0) -> list[LatencyRateCurve]:
    """One latency-rate curve per message.

    ``method``: "exact" (renewal DP, unit penalty), "mc" (renewal Monte Carlo
    with common random numbers, unit penalty) or "dqn" (any penalty).
    """
    grid = rate_grid(grid_step)
    unit = np.allclose(config.penalty_fn, 1.0)
    if method in ("exact", "mc") and not unit:
        raise ValueError(f"method {method!r} needs a unit latency penalty; use 'dqn'")
    curves = []
    for n, lam in enumerate(config.arrival_rates):
        if method == "exact":
            vals = [latency_rate_exact(lam, r) for r in grid]
        elif method == "mc":
            arr = np.random.default_rng(seed + n).poisson(lam, size=horizon)
            vals = [latency_rate_threshold(lam, r, horizon, seed + n, arrivals=arr) for r in grid]
        elif method == "dqn":
            cfg = dqn_config or DqnConfig(seed=seed + n)
            vals = [latency_rate_dqn(lam, config.penalty_fn[n], r, cfg).f_value for r in grid]
        else:
            raise ValueError(f"unknown method {method!r}")
        curves.append(LatencyRateCurve(grid.copy(), np.array(vals)))
    return curves


class BoundResult(NamedTuple):
    rates: np.ndarray    # N x M multicast starts per slot
    value: float         # upper bound on the long-run average reward
    energy: float        # minimum-energy consumption per slot at those rates
    latency: float       # latency penalty per slot at those rates


def allocate_rates(curves, e_table, duration_table, tradeoff_v: float) -> BoundResult:
    """Maximize -V * sum(e * rates) + sum_n f_n(sum_m rates[n, m]) under channel budgets.

    Each f_n enters through the upper concave hull of its samples, so the
    program is a linear one over the hull's segments. Aggregate rates are kept
    within the sampled range [min grid rate, 1].
    """
    e = np.asarray(e_table, dtype=float)
    dur = np.asarray(duration_table, dtype=float)
    n_msg, n_ch = e.shape
    n_g = n_msg * n_ch
    # variables: rates (n_msg * n_ch, row-major), then y_n
    c = np.concatenate([tradeoff_v * e.ravel(), -np.ones(n_msg)])
    a_ub, b_ub = [], []
    for m in range(n_ch):
        row = np.zeros(n_g + n_msg)
        row[[n * n_ch + m for n in range(n_msg)]] = dur[:, m]
        a_ub.append(row)
        b_ub.append(1.0)
    lows = []
    for n, curve in enumerate(curves):
        xs, ys = curve.concave_envelope()
        lows.append(xs[0])
        agg = np.zeros(n_g + n_msg)
        agg[n * n_ch:(n + 1) * n_ch] = 1.0
        a_ub.append(agg.copy())
        b_ub.append(1.0)
        a_ub.append(-agg)
        b_ub.append(-xs[0])
        for k in range(len(xs) - 1):
            slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
            row = -slope * agg
            row[n_g + n] = 1.0
            a_ub.append(row)
            b_ub.append(ys[k] - slope * xs[k])
        if len(xs) == 1:
            row = np.zeros(n_g + n_msg)
            row[n_g + n] = 1.0
            a_ub.append(row)
            b_ub.append(ys[0])
    bounds = [(0, None)] * n_g + [(None, None)] * n_msg
    res = linprog(c, A_ub=np.array(a_ub), b_ub=np.array(b_ub), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"rate allocation failed: {res.message}")
    rates = np.clip(res.x[:n_g].reshape(n_msg, n_ch), 0.0, None)
    agg_rates = rates.sum(axis=1)
    latency = -float(sum(curve(r) for curve, r in zip(curves, agg_rates)))
    energy = float(np.sum(e * rates))
    return BoundResult(rates, -tradeoff_v * energy - latency, energy, latency)


def upper_bound(config: EnvConfig, grid_step: float = 0.02, method: str = "exact",
                curves=None, **curve_kw) -> BoundResult:
    """Bound for a scenario, building latency-rate curves when not supplied."""
    curves = curves if curves is not None else build_curves(config, grid_step, method, **curve_kw)
    e = min_energy_table(config.duration_table, config.energy_const, config.max_gain)
    return allocate_rates(curves, e, config.duration_table, config.tradeoff_v)


def dominance_check(bound_value: float, policy_reward: float, policy_se: float = 0.0,
                    n_sigma: float = 3.0) -> bool:
    """True iff the bound is not beaten beyond Monte Carlo noise."""
    return bool(bound_value >= policy_reward - n_sigma * policy_se)
