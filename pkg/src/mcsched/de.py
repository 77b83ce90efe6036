"""Distribution embedding: turn M per-channel action distributions into one
joint action that never starts the same message on two channels.

Agents draw in a random order; after each nonzero pick the claimed message is
zeroed out of every remaining agent's distribution, which is then
renormalized over actions.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

TOL = 1e-9


class ResolvedAction(NamedTuple):
    joint: np.ndarray          # length M, entries in 0..N
    stored_probs: np.ndarray   # original probability of each agent's pick


def _check_policies(policies) -> np.ndarray:
    p = np.array(policies, dtype=float, ndmin=2)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > TOL):
        raise ValueError("each policy must be nonnegative and sum to 1")
    return p


def random_order(n_agents: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of 0..n_agents-1."""
    if n_agents < 1:
        raise ValueError("need at least one agent")
    return rng.permutation(n_agents)


def modify(policies: np.ndarray, chosen_action: int) -> np.ndarray:
    """Remove ``chosen_action`` from every row and renormalize.

    Rows left with no mass collapse onto the idle action. Action 0 is never
    removed because idling on several channels is always allowed.
    """
    p = np.array(policies, dtype=float, ndmin=2)
    if chosen_action == 0:
        return p
    p[:, chosen_action] = 0.0
    total = p.sum(axis=1)
    empty = total <= 0.0
    p[~empty] /= total[~empty, None]
    p[empty] = 0.0
    p[empty, 0] = 1.0
    return p


def _sample_row(p: list, u: float) -> int:
    target = u * sum(p)
    acc = 0.0
    last = 0
    for a, x in enumerate(p):
        if x <= 0.0:
            continue
        acc += x
        last = a
        if target < acc:
            return a
    return last


def resolve(
    policies,
    order_rng: np.random.Generator,
    sample_rng: np.random.Generator | None = None,
) -> ResolvedAction:
    """Sample a joint action from masked per-agent distributions.

    ``order_rng`` drives the agent ordering and ``sample_rng`` (defaulting to
    the same generator) the categorical draws.
    """
    original = _check_policies(policies)
    sample_rng = order_rng if sample_rng is None else sample_rng
    n_agents = original.shape[0]
    order = random_order(n_agents, order_rng).tolist()
    u = sample_rng.random(n_agents).tolist()
    # plain lists: the loop is tiny and numpy call overhead dominates
    work = original.tolist()
    joint = [0] * n_agents
    for k, agent in enumerate(order):
        a = _sample_row(work[agent], u[k])
        joint[agent] = a
        if a == 0:
            continue
        for other in order[k + 1:]:
            row = work[other]
            if row[a] == 0.0:
                continue
            row[a] = 0.0
            total = sum(row)
            if total > 0.0:
                work[other] = [x / total for x in row]
            else:
                work[other] = [1.0] + [0.0] * (len(row) - 1)
    joint = np.array(joint, dtype=np.int64)
    stored = original[np.arange(n_agents), joint]
    return ResolvedAction(joint, stored)
