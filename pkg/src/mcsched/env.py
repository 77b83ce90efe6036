"""Multi-message, multi-channel multicast scheduling MDP.

State is the triple (request matrix, channel availability, channel status).
Messages are numbered 1..N inside actions (0 is the idle action); channels
and matrix rows are plain 0-based array indices.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed configurations or mismatched dimensions."""


class ConstraintViolation(RuntimeError):
    """Raised when an action breaks the busy-channel or duplicate-start rule."""

    def __init__(self, constraint: str, detail: str):
        self.constraint = constraint
        super().__init__(f"{constraint}: {detail}")


@dataclass(frozen=True)
class EnvConfig:
    n_messages: int
    n_channels: int
    buffer_len: int
    arrival_rates: np.ndarray
    duration_table: np.ndarray
    energy_const: np.ndarray
    tradeoff_v: float
    penalty_fn: np.ndarray
    gain_support: np.ndarray
    seed: int = 0

    def __post_init__(self):
        n, m, b = self.n_messages, self.n_channels, self.buffer_len
        if n < 1 or m < 1:
            raise ConfigError("n_messages and n_channels must be positive")
        if b < 2:
            raise ConfigError("buffer_len must be >= 2")
        rates = np.asarray(self.arrival_rates, dtype=float).reshape(-1)
        dur = np.asarray(self.duration_table, dtype=np.int64)
        z = np.asarray(self.energy_const, dtype=float)
        pen = np.asarray(self.penalty_fn, dtype=float)
        gains = np.unique(np.asarray(self.gain_support, dtype=float).reshape(-1))
        if rates.shape != (n,):
            raise ConfigError(f"arrival_rates must have length {n}")
        if np.any(rates <= 0):
            raise ConfigError("arrival rates must be positive")
        if dur.shape != (n, m) or np.any(dur < 1):
            raise ConfigError(f"duration_table must be {n}x{m} with entries >= 1")
        if z.shape != (n, m) or np.any(z <= 0):
            raise ConfigError(f"energy_const must be {n}x{m} and positive")
        if pen.shape != (n, b) or np.any(pen < 0):
            raise ConfigError(f"penalty_fn must be {n}x{b} and nonnegative")
        if gains.size == 0 or gains[0] <= 0:
            raise ConfigError("gain_support must be nonempty and positive")
        if self.tradeoff_v < 0:
            raise ConfigError("tradeoff_v must be nonnegative")
        object.__setattr__(self, "arrival_rates", rates)
        object.__setattr__(self, "duration_table", dur)
        object.__setattr__(self, "energy_const", z)
        object.__setattr__(self, "penalty_fn", pen)
        object.__setattr__(self, "gain_support", gains)
        object.__setattr__(self, "tradeoff_v", float(self.tradeoff_v))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def max_gain(self) -> float:
        return float(self.gain_support[-1])

    @property
    def obs_dim(self) -> int:
        return self.n_messages * self.buffer_len + 1 + self.n_messages

    @property
    def state_dim(self) -> int:
        n, m = self.n_messages, self.n_channels
        return n * self.buffer_len + m + n * m

    def replace(self, **changes) -> "EnvConfig":
        doc = self.to_dict()
        doc.update(changes)
        return EnvConfig.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "n_messages": self.n_messages,
            "n_channels": self.n_channels,
            "buffer_len": self.buffer_len,
            "arrival_rates": self.arrival_rates.tolist(),
            "duration_table": self.duration_table.tolist(),
            "energy_const": self.energy_const.tolist(),
            "tradeoff_v": self.tradeoff_v,
            "penalty_fn": self.penalty_fn.tolist(),
            "gain_support": self.gain_support.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvConfig":
        try:
            return cls(**{k: doc[k] for k in _CONFIG_FIELDS})
        except KeyError as exc:
            raise ConfigError(f"missing config field {exc.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EnvConfig":
        return cls.from_dict(json.loads(text))


_CONFIG_FIELDS = (
    "n_messages", "n_channels", "buffer_len", "arrival_rates", "duration_table",
    "energy_const", "tradeoff_v", "penalty_fn", "gain_support", "seed",
)


def make_config(
    arrival_rates: Sequence[float],
    n_channels: int = 1,
    buffer_len: int = 4,
    duration: int | np.ndarray = 1,
    energy_const: float | np.ndarray = 500.0,
    tradeoff_v: float = 1.0,
    penalty: str | np.ndarray = "unit",
    gain_support: Sequence[float] = tuple(range(100, 111)),
    seed: int = 0,
) -> EnvConfig:
    """Build a config with broadcast defaults.

    ``penalty`` is ``"unit"`` (p(tau)=1), ``"linear"`` (p(tau)=tau) or an
    explicit N x buffer_len table.
    """
    rates = np.asarray(arrival_rates, dtype=float)
    n = rates.size
    if isinstance(penalty, str):
        taus = np.arange(1, buffer_len + 1, dtype=float)
        if penalty == "unit":
            pen = np.ones((n, buffer_len))
        elif penalty == "linear":
            pen = np.tile(taus, (n, 1))
        else:
            raise ConfigError(f"unknown penalty form {penalty!r}")
    else:
        pen = np.asarray(penalty, dtype=float)
    try:
        dur = np.broadcast_to(np.asarray(duration), (n, n_channels)).copy()
        z = np.broadcast_to(np.asarray(energy_const, dtype=float), (n, n_channels)).copy()
    except ValueError:
        raise ConfigError(f"duration and energy_const must broadcast to {n}x{n_channels}") from None
    return EnvConfig(
        n_messages=n,
        n_channels=n_channels,
        buffer_len=buffer_len,
        arrival_rates=rates,
        duration_table=dur,
        energy_const=z,
        tradeoff_v=tradeoff_v,
        penalty_fn=pen,
        gain_support=np.asarray(gain_support, dtype=float),
        seed=seed,
    )


@dataclass(frozen=True)
class EnvState:
    request_matrix: np.ndarray   # N x M*, int
    channel_avail: np.ndarray    # M, int
    channel_status: np.ndarray   # N x M, float
    clock: int = 1

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.request_matrix.ravel().astype(float),
            self.channel_avail.astype(float),
            self.channel_status.ravel(),
        ])


class AgentObservation(NamedTuple):
    request_matrix: np.ndarray
    own_avail: int
    own_gains: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.request_matrix.ravel().astype(float),
            [float(self.own_avail)],
            self.own_gains,
        ])


class RewardTerms(NamedTuple):
    reward: float
    energy: float
    latency: float


# --------------------------------------------------------------------------
# randomness

STREAM_NAMES = ("arrivals", "gains", "order", "sample", "init")


@dataclass
class RngStreams:
    """Independent generators, one per stochastic source."""

    arrivals: np.random.Generator
    gains: np.random.Generator
    order: np.random.Generator
    sample: np.random.Generator
    init: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        children = np.random.SeedSequence(int(seed) & (2**64 - 1)).spawn(len(STREAM_NAMES))
        return cls(*(np.random.default_rng(s) for s in children))


class PoissonSampler:
    """Vectorized Poisson sampling by CDF inversion."""

    def __init__(self, rates: np.ndarray):
        self.rates = np.asarray(rates, dtype=float)
        tables = [self._cdf_table(lam) for lam in self.rates]
        width = max(t.size for t in tables)
        self._table = np.ones((len(tables), width))
        for i, t in enumerate(tables):
            self._table[i, : t.size] = t

    @staticmethod
    def _cdf_table(lam: float) -> np.ndarray:
        if lam == 0:
            return np.array([1.0])
        kmax = int(lam + 12 * math.sqrt(lam) + 30)
        k = np.arange(kmax + 1)
        logpmf = k * math.log(lam) - lam - np.array([math.lgamma(i + 1) for i in k])
        cdf = np.cumsum(np.exp(logpmf))
        cdf[-1] = 1.0
        return cdf

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.rates.size)
        return (u[:, None] >= self._table).sum(axis=1)


def sample_min_gains(
    counts: np.ndarray, n_channels: int, support: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Minimum of ``counts[n]`` i.i.d. uniform gains, drawn per (message, channel).

    Returns an N x M array with ``inf`` where no request arrived. Sampling
    inverts the exact law of the minimum: P(min >= s_j) = ((K - j) / K)^k.
    """
    k_support = support.size
    u = rng.random((counts.size, n_channels))
    out = np.full((counts.size, n_channels), np.inf)
    has = counts > 0
    if not np.any(has):
        return out
    k = counts[has].astype(float)[:, None]
    # P(min <= s_j) for j = 0..K-1
    j = np.arange(k_support, dtype=float)
    cdf = 1.0 - ((k_support - 1 - j)[None, :] / k_support) ** k
    idx = (u[has][:, :, None] > cdf[:, None, :]).sum(axis=2)
    out[has] = support[np.minimum(idx, k_support - 1)]
    return out


# --------------------------------------------------------------------------
# pure MDP pieces


def init_state(config: EnvConfig) -> EnvState:
    n, m = config.n_messages, config.n_channels
    return EnvState(
        request_matrix=np.zeros((n, config.buffer_len), dtype=np.int64),
        channel_avail=np.zeros(m, dtype=np.int64),
        channel_status=np.full((n, m), config.max_gain),
        clock=1,
    )


def _check_action(state: EnvState, action) -> np.ndarray:
    a = np.asarray(action, dtype=np.int64).reshape(-1)
    n = state.request_matrix.shape[0]
    if a.shape != state.channel_avail.shape:
        raise ConfigError(
            f"action has {a.size} entries, expected {state.channel_avail.size}"
        )
    if a.min() < 0 or a.max() > n:
        raise ConfigError(f"action entries must lie in 0..{n}")
    return a


def busy_violations(state: EnvState, action) -> np.ndarray:
    a = _check_action(state, action)
    return np.flatnonzero((state.channel_avail > 0) & (a > 0))


def duplicate_messages(action) -> np.ndarray:
    a = np.asarray(action, dtype=np.int64).reshape(-1)
    counts = np.bincount(a)
    counts[0] = 0
    return np.flatnonzero(counts > 1)


def feasible(state: EnvState, action) -> bool:
    """True iff busy channels idle and no message starts on two channels."""
    a = _check_action(state, action)
    if (state.channel_avail * a).any():
        return False
    return duplicate_messages(a).size == 0


def validate_action(state: EnvState, action, allow_duplicates: bool = False) -> np.ndarray:
    a = _check_action(state, action)
    if (state.channel_avail * a).any():
        busy = np.flatnonzero((state.channel_avail > 0) & (a > 0))
        raise ConstraintViolation(
            "busy-channel", f"channels {busy.tolist()} are busy but were scheduled"
        )
    if not allow_duplicates:
        dup = duplicate_messages(a)
        if dup.size:
            raise ConstraintViolation(
                "duplicate-start", f"messages {dup.tolist()} started on several channels"
            )
    return a


def shift_request_vector(q_vec, new_count: int, multicast: bool) -> np.ndarray:
    q = np.asarray(q_vec, dtype=np.int64)
    out = np.zeros_like(q)
    out[0] = new_count
    if not multicast:
        out[1:-1] = q[:-2]
        out[-1] = q[-2] + q[-1]
    return out


def update_channel_status(
    g_old: float, new_request_gains: Sequence[float], multicast: bool, max_gain: float
) -> float:
    """Worst buffered gain after one slot; an empty buffer resets to ``max_gain``."""
    new_min = min(new_request_gains) if len(new_request_gains) else math.inf
    if multicast:
        return max_gain if new_min == math.inf else float(new_min)
    return float(min(g_old, new_min))


def instant_latency_penalty(request_matrix: np.ndarray, penalty_fn: np.ndarray) -> float:
    return float(np.sum(np.asarray(request_matrix) * penalty_fn))


def multicast_status(action, n_messages: int) -> np.ndarray:
    """Boolean vector over messages 1..N: started on some channel this slot."""
    a = np.asarray(action).reshape(-1)
    status = np.zeros(n_messages, dtype=bool)
    started = a[a > 0]
    status[started - 1] = True
    return status


def reward_terms(config: EnvConfig, state: EnvState, action) -> RewardTerms:
    a = np.asarray(action).reshape(-1)
    chans = np.flatnonzero(a > 0)
    msgs = a[chans] - 1
    energy = float(np.sum(
        config.duration_table[msgs, chans] * config.energy_const[msgs, chans]
        / state.channel_status[msgs, chans]
    ))
    latency = instant_latency_penalty(state.request_matrix, config.penalty_fn)
    return RewardTerms(-(config.tradeoff_v * energy + latency), energy, latency)


def transition(
    config: EnvConfig,
    state: EnvState,
    action,
    arrivals: np.ndarray,
    new_min_gains: np.ndarray,
) -> EnvState:
    """Deterministic next state given this slot's arrivals and their worst gains.

    ``new_min_gains`` is N x M, ``inf`` where a message had no arrivals.
    """
    a = np.asarray(action, dtype=np.int64).reshape(-1)
    b = multicast_status(a, config.n_messages)
    q = state.request_matrix
    arrivals = np.asarray(arrivals, dtype=np.int64)

    q_next = np.zeros_like(q)
    q_next[:, 0] = arrivals
    keep = ~b
    q_next[keep, 1:-1] = q[keep, :-2]
    q_next[keep, -1] = q[keep, -2] + q[keep, -1]

    c = state.channel_avail
    c_next = np.zeros_like(c)
    busy = c > 0
    c_next[busy] = c[busy] - 1
    start = (~busy) & (a > 0)
    chans = np.flatnonzero(start)
    c_next[chans] = config.duration_table[a[chans] - 1, chans] - 1

    g_next = np.minimum(state.channel_status, new_min_gains)
    fresh = np.where(np.isinf(new_min_gains), config.max_gain, new_min_gains)
    g_next[b] = fresh[b]

    return EnvState(q_next, c_next, g_next, state.clock + 1)


def step(
    config: EnvConfig,
    state: EnvState,
    action,
    rng: RngStreams,
    sampler: PoissonSampler | None = None,
    allow_duplicates: bool = False,
) -> tuple[EnvState, float]:
    """Validate, score and advance one slot. Reward uses the pre-transition state."""
    a = validate_action(state, action, allow_duplicates=allow_duplicates)
    terms = reward_terms(config, state, a)
    sampler = sampler or PoissonSampler(config.arrival_rates)
    arrivals = sampler.sample(rng.arrivals)
    gains = sample_min_gains(arrivals, config.n_channels, config.gain_support, rng.gains)
    return transition(config, state, a, arrivals, gains), terms.reward


def observe(state: EnvState, m: int) -> AgentObservation:
    """Observation of channel ``m`` (0-based)."""
    n_ch = state.channel_avail.size
    if not 0 <= m < n_ch:
        raise IndexError(f"channel index {m} out of range 0..{n_ch - 1}")
    return AgentObservation(
        state.request_matrix.copy(), int(state.channel_avail[m]),
        state.channel_status[:, m].copy(),
    )


# --------------------------------------------------------------------------
# stateful wrapper


@dataclass
class MulticastEnv:
    """Mutable simulator holding a state and its generator streams."""

    config: EnvConfig
    seed: int | None = None
    state: EnvState = field(init=False)
    rng: RngStreams = field(init=False)

    def __post_init__(self):
        self.rng = RngStreams.from_seed(self.config.seed if self.seed is None else self.seed)
        self._sampler = PoissonSampler(self.config.arrival_rates)
        self.state = init_state(self.config)

    def reset(self) -> EnvState:
        self.state = init_state(self.config)
        return self.state

    def step(self, action, allow_duplicates: bool = False) -> RewardTerms:
        a = validate_action(self.state, action, allow_duplicates=allow_duplicates)
        terms = reward_terms(self.config, self.state, a)
        arrivals = self._sampler.sample(self.rng.arrivals)
        gains = sample_min_gains(
            arrivals, self.config.n_channels, self.config.gain_support, self.rng.gains
        )
        self.state = transition(self.config, self.state, a, arrivals, gains)
        return terms

    def observations(self) -> list[AgentObservation]:
        return [observe(self.state, m) for m in range(self.config.n_channels)]
