"""Per-channel PPO agents with busy-channel masking.

Each agent owns a softmax actor over its own observation and a critic over the
full state. Actions forced by a busy channel carry ratio 1 and no policy
gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .env import AgentObservation, EnvConfig, EnvState
from .nn import DenseNet


@dataclass(frozen=True)
class PpoHyper:
    n_buffer: int = 1000
    n_updates: int = 10
    discount: float = 0.9
    clip: float = 0.2
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01
    learning_rate: float = 1e-3
    reward_scale: float = 1.0
    normalize_advantages: bool = False

    def __post_init__(self):
        if not 0 < self.discount < 1 or not 0 < self.clip < 1:
            raise ValueError("discount and clip must lie in (0, 1)")
        if min(self.value_coeff, self.entropy_coeff, self.learning_rate) < 0:
            raise ValueError("coefficients must be nonnegative")
        if self.n_buffer < 1 or self.n_updates < 0:
            raise ValueError("n_buffer >= 1 and n_updates >= 0 required")


class ExperienceRecord(NamedTuple):
    global_state: np.ndarray   # EnvState.flatten()
    agent_obs: np.ndarray      # AgentObservation.flatten()
    agent_action: int
    reward: float
    stored_prob: float


class FeatureScaler:
    """Fixed affine rescaling of raw observations into O(1) network inputs."""

    def __init__(self, config: EnvConfig):
        n, m, b = config.n_messages, config.n_channels, config.buffer_len
        q_scale = np.repeat(np.maximum(config.arrival_rates, 1.0), b)
        c_scale = float(max(1, config.duration_table.max()))
        g_lo = float(config.gain_support[0])
        g_span = max(config.max_gain - g_lo, 1.0)
        self.obs_shift = np.concatenate([np.zeros(n * b + 1), np.full(n, g_lo)])
        self.obs_div = np.concatenate([q_scale, [c_scale], np.full(n, g_span)])
        self.state_shift = np.concatenate([np.zeros(n * b + m), np.full(n * m, g_lo)])
        self.state_div = np.concatenate([q_scale, np.full(m, c_scale), np.full(n * m, g_span)])
        self.avail_index = n * b

    def obs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.obs_shift) / self.obs_div

    def state(self, x: np.ndarray) -> np.ndarray:
        return (x - self.state_shift) / self.state_div


def masked(probs: np.ndarray, forced: np.ndarray | bool) -> np.ndarray:
    """Replace rows whose channel is busy with the idle-only distribution."""
    p = np.array(probs, dtype=float)
    if p.ndim == 1:
        if forced:
            p[:] = 0.0
            p[0] = 1.0
        return p
    forced = np.asarray(forced, dtype=bool)
    p[forced] = 0.0
    p[forced, 0] = 1.0
    return p


class PpoAgent:
    def __init__(
        self,
        config: EnvConfig,
        actor_hidden=(16, 16),
        critic_hidden=(16, 16),
        rng: np.random.Generator | None = None,
        activation: str = "tanh",
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        n = config.n_messages
        self.n_actions = n + 1
        self.scaler = FeatureScaler(config)
        self.actor = DenseNet([config.obs_dim, *actor_hidden, n + 1], "softmax", activation, rng)
        self.critic = DenseNet([config.state_dim, *critic_hidden, 1], "linear", activation, rng)
        self.buffer: list[ExperienceRecord] = []

    def act_distribution(self, obs: AgentObservation | np.ndarray) -> np.ndarray:
        x = obs.flatten() if isinstance(obs, AgentObservation) else np.asarray(obs, float)
        if x[self.scaler.avail_index] > 0:
            p = np.zeros(self.n_actions)
            p[0] = 1.0
            return p
        return self.actor(self.scaler.obs(x))

    def value(self, state: EnvState | np.ndarray) -> float:
        x = state.flatten() if isinstance(state, EnvState) else np.asarray(state, float)
        return float(self.critic(self.scaler.state(x))[0])

    def store(self, record: ExperienceRecord, capacity: int) -> None:
        if len(self.buffer) >= capacity:
            raise RuntimeError("experience buffer is full")
        if not record.stored_prob > 0:
            raise ValueError("stored probability must be positive")
        self.buffer.append(record)


# --------------------------------------------------------------------------
# update pieces


def compute_returns(rewards, discount: float) -> np.ndarray:
    """Discounted sums truncated at the end of the buffer (no bootstrap)."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("empty reward sequence")
    out = np.empty_like(r)
    acc = 0.0
    for i in range(r.size - 1, -1, -1):
        acc = r[i] + discount * acc
        out[i] = acc
    return out


def compute_advantage(return_value, critic_value):
    return np.asarray(return_value, dtype=float) - np.asarray(critic_value, dtype=float)


def compute_ratio(record: ExperienceRecord, actor_probs: np.ndarray, forced: bool) -> float:
    """Importance ratio of the current masked actor against the stored probability."""
    if not record.stored_prob > 0:
        raise ValueError("corrupted buffer: stored probability must be positive")
    if forced:
        return 1.0
    return float(actor_probs[record.agent_action]) / record.stored_prob


@dataclass
class Batch:
    """Stacked buffer contents plus the frozen update-start targets."""

    states: np.ndarray        # scaled critic inputs
    obs: np.ndarray           # scaled actor inputs
    actions: np.ndarray
    stored: np.ndarray
    forced: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray = field(default=None)

    def __len__(self):
        return self.actions.size


def make_batch(agent: PpoAgent, records, hyper: PpoHyper) -> Batch:
    if not records:
        raise ValueError("empty batch")
    raw_obs = np.stack([r.agent_obs for r in records])
    states = agent.scaler.state(np.stack([r.global_state for r in records]))
    rewards = np.array([r.reward for r in records]) * hyper.reward_scale
    returns = compute_returns(rewards, hyper.discount)
    frozen_values = agent.critic(states)[:, 0]
    adv = compute_advantage(returns, frozen_values)
    if hyper.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    stored = np.array([r.stored_prob for r in records])
    if np.any(stored <= 0):
        raise ValueError("corrupted buffer: stored probability must be positive")
    return Batch(
        states=states,
        obs=agent.scaler.obs(raw_obs),
        actions=np.array([r.agent_action for r in records], dtype=np.int64),
        stored=stored,
        forced=raw_obs[:, agent.scaler.avail_index] > 0,
        returns=returns,
        advantages=adv,
    )


class LossParts(NamedTuple):
    loss: float
    policy: float
    value: float
    entropy: float
    actor_grads: list
    critic_grads: list


def surrogate_loss(agent: PpoAgent, batch: Batch, hyper: PpoHyper) -> LossParts:
    """Clipped surrogate + value error - entropy bonus, averaged over the batch.

    The advantage is a constant; the value term regresses the current critic
    onto the stored discounted returns.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    eps = hyper.clip
    idx = np.arange(n)
    free = ~batch.forced

    probs, a_tape = agent.actor.forward(batch.obs)
    p_act = probs[idx, batch.actions]
    ratio = np.where(free, p_act / batch.stored, 1.0)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    surrogate = np.minimum(unclipped, clipped)
    logp = np.log(probs)
    ent = np.where(free, -np.sum(probs * logp, axis=1), 0.0)

    values, c_tape = agent.critic.forward(batch.states)
    err = batch.returns - values[:, 0]

    policy_loss = -surrogate.mean()
    value_loss = hyper.value_coeff * np.mean(err ** 2)
    entropy = ent.mean()
    loss = policy_loss + value_loss - hyper.entropy_coeff * entropy

    g_probs = np.zeros_like(probs)
    use_unclipped = free & (unclipped <= clipped)
    g_probs[idx[use_unclipped], batch.actions[use_unclipped]] = (
        -adv[use_unclipped] / batch.stored[use_unclipped] / n
    )
    g_probs[free] += hyper.entropy_coeff * (logp[free] + 1.0) / n
    actor_grads = agent.actor.backward(a_tape, g_probs)

    g_values = (-2.0 * hyper.value_coeff / n) * err[:, None]
    critic_grads = agent.critic.backward(c_tape, g_values)
    return LossParts(float(loss), float(policy_loss), float(value_loss), float(entropy),
                     actor_grads, critic_grads)


def update(agent: PpoAgent, hyper: PpoHyper) -> list[LossParts]:
    """Run ``n_updates`` gradient steps on a full buffer, then empty it."""
    if len(agent.buffer) != hyper.n_buffer:
        raise RuntimeError(
            f"buffer holds {len(agent.buffer)} records, update needs {hyper.n_buffer}"
        )
    batch = make_batch(agent, agent.buffer, hyper)
    history = []
    for _ in range(hyper.n_updates):
        parts = surrogate_loss(agent, batch, hyper)
        agent.actor.optimizer_step(parts.actor_grads, hyper.learning_rate)
        agent.critic.optimizer_step(parts.critic_grads, hyper.learning_rate)
        history.append(parts)
    agent.buffer.clear()
    return history
