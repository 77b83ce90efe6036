"""Offline training loop, online application, and the policy evaluation harness."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import de
from .env import ConstraintViolation, EnvConfig, EnvState, MulticastEnv, feasible
from .nn import StackedForward, save_weights
from .ppo import ExperienceRecord, PpoAgent, PpoHyper, update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    env: EnvConfig
    hyper: PpoHyper = PpoHyper()
    episodes: int = 40
    eval_interval: int | None = None   # defaults to n_buffer
    actor_hidden: tuple = (16, 16)
    critic_hidden: tuple = (16, 16)
    activation: str = "tanh"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")

    @property
    def interval(self) -> int:
        return self.eval_interval or self.hyper.n_buffer


# --------------------------------------------------------------------------
# metrics


@dataclass
class MetricTrace:
    """Snapshots of windowed and cumulative per-slot averages."""

    n_messages: int
    n_channels: int
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def header(self) -> list[str]:
        rates = [f"rate_{n + 1}_{m + 1}" for n in range(self.n_messages)
                 for m in range(self.n_channels)]
        return ["slot", "avg_reward", "avg_energy", "avg_latency", "cum_avg_reward", *rates]

    def column(self, name: str) -> np.ndarray:
        i = self.header.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([row[0], *(repr(float(x)) for x in row[1:])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


class _Meter:
    def __init__(self, config: EnvConfig, interval: int, warmup: int, trace: MetricTrace):
        self.config, self.interval, self.warmup, self.trace = config, interval, warmup, trace
        n, m = config.n_messages, config.n_channels
        self.win = np.zeros(3)
        self.win_starts = np.zeros((n, m))
        self.win_len = 0
        self.cum_reward = 0.0
        self.cum_len = 0
        self.slots = 0

    def add(self, action: np.ndarray, reward: float, energy: float, latency: float, clock: int):
        self.win += (reward, energy, latency)
        chans = np.flatnonzero(action > 0)
        self.win_starts[action[chans] - 1, chans] += 1
        self.win_len += 1
        self.slots += 1
        if self.slots > self.warmup:
            self.cum_reward += reward
            self.cum_len += 1
        if self.win_len == self.interval:
            self.flush(clock)

    def flush(self, clock: int):
        if self.win_len == 0:
            return
        means = self.win / self.win_len
        cum = self.cum_reward / self.cum_len if self.cum_len else means[0]
        rates = (self.win_starts / self.win_len).ravel()
        self.trace.rows.append([int(clock), *means.tolist(), cum, *rates.tolist()])
        self.win[:] = 0.0
        self.win_starts[:] = 0.0
        self.win_len = 0


class PolicyMetrics(NamedTuple):
    avg_reward: float
    avg_energy: float
    avg_latency: float
    reward_se: float
    rates: np.ndarray


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of a long-run mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n_batches = min(n_batches, x.size)
    if n_batches < 2:
        return float("nan")
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


# --------------------------------------------------------------------------
# policies


class DePolicy:
    """Masked actors resolved into one feasible joint action per slot."""

    def __init__(self, agents: list[PpoAgent]):
        self.agents = agents
        self._stacked = StackedForward([agent.actor for agent in agents])
        self._scaler = agents[0].scaler

    def distributions(self, state: EnvState) -> np.ndarray:
        """Masked per-channel distributions; busy channels get the idle-only row."""
        n_actions = self.agents[0].n_actions
        out = np.zeros((len(self.agents), n_actions))
        free = np.flatnonzero(state.channel_avail == 0)
        out[:, 0] = 1.0
        if free.size:
            # evaluating every actor beats gathering the free ones' weights
            q = state.request_matrix.ravel().astype(float)
            x = np.empty((len(self.agents), self._scaler.obs_div.size))
            x[:, : q.size] = q
            x[:, q.size] = 0.0
            x[:, q.size + 1:] = state.channel_status.T
            out[free] = self._stacked(self._scaler.obs(x))[free]
        return out

    def resolve(self, state: EnvState, rng) -> de.ResolvedAction:
        return de.resolve(self.distributions(state), rng.order, rng.sample)

    def __call__(self, state: EnvState, rng) -> np.ndarray:
        return self.resolve(state, rng).joint


def _assert_throughput(loads: np.ndarray, state: EnvState, clock: int):
    # busy slots within the first `clock` slots never exceed `clock`
    if np.any(loads - state.channel_avail > clock):
        raise AssertionError("channel occupancy exceeded elapsed time")


def evaluate_policy(
    policy: Callable[[EnvState, object], np.ndarray],
    env: MulticastEnv,
    horizon: int,
    warmup: int = 0,
    allow_duplicates: bool = False,
) -> PolicyMetrics:
    """Long-run averages of a state -> action map over ``horizon`` slots.

    Infeasible actions raise ``ConstraintViolation`` naming the constraint.
    """
    cfg = env.config
    rewards = np.empty(horizon)
    energy = np.empty(horizon)
    latency = np.empty(horizon)
    starts = np.zeros((cfg.n_messages, cfg.n_channels))
    for _ in range(warmup):
        env.step(policy(env.state, env.rng), allow_duplicates=allow_duplicates)
    for t in range(horizon):
        a = np.asarray(policy(env.state, env.rng), dtype=np.int64)
        terms = env.step(a, allow_duplicates=allow_duplicates)
        rewards[t], energy[t], latency[t] = terms
        chans = np.flatnonzero(a > 0)
        starts[a[chans] - 1, chans] += 1
    if horizon == 0:
        return PolicyMetrics(0.0, 0.0, 0.0, float("nan"), starts)
    return PolicyMetrics(
        float(rewards.mean()), float(energy.mean()), float(latency.mean()),
        batch_means_se(rewards), starts / horizon,
    )


# --------------------------------------------------------------------------
# training


def build_agents(config: TrainConfig, rng: np.random.Generator) -> list[PpoAgent]:
    return [
        PpoAgent(config.env, config.actor_hidden, config.critic_hidden, rng, config.activation)
        for _ in range(config.env.n_channels)
    ]


def train(
    config: TrainConfig,
    seed: int | None = None,
    checkpoint_dir: str | Path | None = None,
    on_episode: Callable[[int, list, MetricTrace], None] | None = None,
) -> tuple[list[PpoAgent], MetricTrace]:
    """Alternate buffer filling and PPO updates for ``config.episodes`` episodes.

    Each episode restarts the environment from the empty state, runs
    ``n_buffer`` slots, then performs ``n_updates`` steps on every agent.
    """
    env = MulticastEnv(config.env, seed=seed)
    agents = build_agents(config, env.rng.init)
    policy = DePolicy(agents)
    trace = MetricTrace(config.env.n_messages, config.env.n_channels)
    hyper = config.hyper
    meter = _Meter(config.env, config.interval, hyper.n_buffer, trace)
    loads = np.zeros(config.env.n_channels)
    durations = config.env.duration_table
    clock = 0
    for episode in range(config.episodes):
        env.reset()
        loads[:] = 0.0
        for t in range(1, hyper.n_buffer + 1):
            state = env.state
            resolved = policy.resolve(state, env.rng)
            a = resolved.joint
            if not feasible(state, a):
                raise ConstraintViolation("internal", f"resolver produced {a.tolist()}")
            terms = env.step(a)
            chans = np.flatnonzero(a > 0)
            loads[chans] += durations[a[chans] - 1, chans]
            _assert_throughput(loads, env.state, t)
            gstate = state.flatten()
            q = state.request_matrix.ravel().astype(float)
            for m, agent in enumerate(agents):
                obs = np.concatenate([q, [state.channel_avail[m]], state.channel_status[:, m]])
                agent.store(
                    ExperienceRecord(gstate, obs, int(a[m]), terms.reward,
                                     float(resolved.stored_probs[m])),
                    hyper.n_buffer,
                )
            clock += 1
            meter.add(a, *terms, clock)
        for agent in agents:
            update(agent, hyper)
        if on_episode is not None:
            on_episode(episode, agents, trace)
        if checkpoint_dir and config.checkpoint_every and (episode + 1) % config.checkpoint_every == 0:
            write_checkpoints(agents, Path(checkpoint_dir) / f"episode_{episode + 1:05d}")
    meter.flush(clock)
    return agents, trace


def apply_online(
    agents: list[PpoAgent], env: MulticastEnv, horizon: int, interval: int = 1000,
    warmup: int = 0,
) -> MetricTrace:
    """Run the trained policy with no buffering and no updates."""
    policy = DePolicy(agents)
    trace = MetricTrace(env.config.n_messages, env.config.n_channels)
    meter = _Meter(env.config, interval, warmup, trace)
    for t in range(1, horizon + 1):
        a = policy(env.state, env.rng)
        terms = env.step(a)
        meter.add(a, *terms, t)
    meter.flush(horizon)
    return trace


def write_checkpoints(agents: list[PpoAgent], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for m, agent in enumerate(agents):
        (directory / f"actor_{m + 1}.json").write_text(save_weights(agent.actor))
        (directory / f"critic_{m + 1}.json").write_text(save_weights(agent.critic))
