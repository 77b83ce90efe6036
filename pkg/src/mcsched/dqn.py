"""Vanilla DQN for the single-message, rate-constrained latency problem.

State is the request vector plus ``z``, the number of slots since the last
multicast; the only decision is whether to multicast now. Ending a cycle whose
length differs from the target ``1 / rate`` costs
``penalty_weight * (z - 1 / rate)**2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .env import PoissonSampler
from .nn import DenseNet


@dataclass(frozen=True)
class DqnConfig:
    hidden: tuple = (32, 32)
    replay_size: int = 10_000
    batch_size: int = 32
    target_sync: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    learning_rate: float = 1e-3
    discount: float = 0.95
    train_steps: int = 20_000
    warmup_steps: int = 500
    penalty_weight: float = 1.0
    eval_slots: int = 20_000
    seed: int = 0


class DqnResult(NamedTuple):
    f_value: float
    achieved_rate: float
    target_rate: float
    reliable: bool


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int):
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.capacity = capacity
        self.size = 0
        self._next = 0

    def add(self, s, a, r, s2):
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.size, size=n)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]


def dqn_loss(net: DenseNet, target: DenseNet, batch, discount: float):
    """Mean squared TD error and its gradient w.r.t. ``net`` parameters."""
    s, a, r, s2 = batch
    y = r + discount * target(s2).max(axis=1)
    q, tape = net.forward(s)
    idx = np.arange(a.size)
    td = q[idx, a] - y
    g = np.zeros_like(q)
    g[idx, a] = 2.0 * td / a.size
    return float(np.mean(td ** 2)), net.backward(tape, g)


class RateLatencyMdp:
    """Single-message request buffer with a cycle-length counter."""

    def __init__(self, rate: float, penalty_fn, target_rate: float, penalty_weight: float,
                 rng: np.random.Generator):
        self.penalty = np.asarray(penalty_fn, dtype=float)
        self.period = 1.0 / target_rate
        self.weight = penalty_weight
        self.rng = rng
        self.sampler = PoissonSampler(np.array([max(rate, 0.0)])) if rate > 0 else None
        self.scale = max(rate, 1.0)
        self.reset()

    def reset(self):
        self.q = np.zeros(self.penalty.size, dtype=np.int64)
        self.q[0] = self._arrivals()
        self.z = 1.0

    def _arrivals(self) -> int:
        return int(self.sampler.sample(self.rng)[0]) if self.sampler else 0

    def features(self) -> np.ndarray:
        lag = (self.z - self.period) / self.period
        return np.concatenate([self.q / self.scale, [np.clip(lag, -5, 5)]])

    def step(self, action: int) -> tuple[float, float]:
        """Returns (training reward, latency penalty) for the current slot."""
        latency = float(self.q @ self.penalty)
        reward = -latency
        new = self._arrivals()
        if action:
            reward -= self.weight * (self.z - self.period) ** 2
            self.q[:] = 0
            self.q[0] = new
            self.z = 1.0
        else:
            self.q[1:] = np.concatenate([self.q[:-2], [self.q[-2] + self.q[-1]]])
            self.q[0] = new
            self.z += 1.0
        return reward, latency


def train_dqn(rate: float, penalty_fn, target_rate: float, config: DqnConfig):
    """Train on the rate-constrained MDP; returns the online network."""
    rng = np.random.default_rng(config.seed)
    env = RateLatencyMdp(rate, penalty_fn, target_rate, config.penalty_weight, rng)
    dim = env.features().size
    net = DenseNet([dim, *config.hidden, 2], "linear", "tanh", rng)
    target = net.copy()
    replay = ReplayBuffer(config.replay_size, dim)
    s = env.features()
    for step in range(config.train_steps):
        frac = min(1.0, step / max(1, config.eps_decay_steps))
        eps = config.eps_start + frac * (config.eps_end - config.eps_start)
        if rng.random() < eps:
            a = int(rng.integers(2))
        else:
            a = int(np.argmax(net(s)))
        r, _ = env.step(a)
        s2 = env.features()
        replay.add(s, a, r / env.scale, s2)
        s = s2
        if replay.size >= max(config.batch_size, config.warmup_steps):
            _, grads = dqn_loss(net, target, replay.sample(rng, config.batch_size), config.discount)
            net.optimizer_step(grads, config.learning_rate)
        if (step + 1) % config.target_sync == 0:
            target.load_params_from(net)
    return net


def evaluate_dqn(net: DenseNet, rate: float, penalty_fn, target_rate: float,
                 config: DqnConfig) -> DqnResult:
    rng = np.random.default_rng(config.seed + 1)
    env = RateLatencyMdp(rate, penalty_fn, target_rate, config.penalty_weight, rng)
    total = 0.0
    starts = 0
    for _ in range(config.eval_slots):
        a = int(np.argmax(net(env.features())))
        _, latency = env.step(a)
        total += latency
        starts += a
    achieved = starts / config.eval_slots
    reliable = abs(achieved - target_rate) <= 0.1 * target_rate
    return DqnResult(-total / config.eval_slots, achieved, target_rate, reliable)
