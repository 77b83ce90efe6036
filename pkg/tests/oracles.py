"""Reference implementations written independently of the package code.

Each one favors plain loops and enumeration over speed so it can be checked
by eye.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def transition_reference(config, q, c, g, action, arrivals, min_gains):
    """Element-by-element next state and reward for one slot.

    ``action`` is 1-based per channel, ``min_gains[n][m]`` is the worst gain of
    message n's new requests on channel m (inf if none).
    """
    n_msg, b_len = len(q), len(q[0])
    n_ch = len(c)
    started = [False] * n_msg
    for m in range(n_ch):
        if action[m] > 0:
            started[action[m] - 1] = True

    energy = 0.0
    for m in range(n_ch):
        if action[m] > 0:
            n = action[m] - 1
            energy += config.duration_table[n][m] * config.energy_const[n][m] / g[n][m]
    latency = 0.0
    for n in range(n_msg):
        for tau in range(b_len):
            latency += q[n][tau] * config.penalty_fn[n][tau]
    reward = -(config.tradeoff_v * energy + latency)

    q2 = [[0] * b_len for _ in range(n_msg)]
    for n in range(n_msg):
        q2[n][0] = int(arrivals[n])
        if not started[n]:
            for tau in range(1, b_len - 1):
                q2[n][tau] = q[n][tau - 1]
            q2[n][b_len - 1] = q[n][b_len - 2] + q[n][b_len - 1]

    c2 = [0] * n_ch
    for m in range(n_ch):
        if c[m] > 0:
            c2[m] = c[m] - 1
        elif action[m] > 0:
            c2[m] = int(config.duration_table[action[m] - 1][m]) - 1
        else:
            c2[m] = 0

    top = float(max(config.gain_support))
    g2 = [[0.0] * n_ch for _ in range(n_msg)]
    for n in range(n_msg):
        for m in range(n_ch):
            new = min_gains[n][m]
            if started[n]:
                g2[n][m] = top if math.isinf(new) else new
            else:
                g2[n][m] = min(g[n][m], new)
    return q2, c2, g2, reward


def de_joint_law(policies):
    """Exact law of the resolver's joint action by enumerating orders and picks."""
    p = [list(map(float, row)) for row in policies]
    n_agents, n_actions = len(p), len(p[0])
    law = {}
    perms = list(itertools.permutations(range(n_agents)))

    def walk(order, k, work, joint, prob):
        if k == len(order):
            key = tuple(joint)
            law[key] = law.get(key, 0.0) + prob / len(perms)
            return
        agent = order[k]
        for a in range(n_actions):
            pa = work[agent][a]
            if pa <= 0:
                continue
            nxt = [row[:] for row in work]
            if a != 0:
                for other in order[k + 1:]:
                    nxt[other][a] = 0.0
                    s = sum(nxt[other])
                    nxt[other] = [x / s for x in nxt[other]] if s > 0 else \
                        [1.0] + [0.0] * (n_actions - 1)
            j = list(joint)
            j[agent] = a
            walk(order, k + 1, nxt, j, prob * pa)

    for order in perms:
        walk(order, 0, p, [0] * n_agents, 1.0)
    return law


def poisson_pmf(rate, kmax):
    return [math.exp(k * math.log(rate) - rate - math.lgamma(k + 1)) for k in range(kmax + 1)]


def capped_kernel(rate, cap):
    pmf = poisson_pmf(rate, cap)
    kern = np.zeros((cap + 1, cap + 1))
    for x in range(cap + 1):
        for a in range(cap + 1):
            y = min(x + a, cap)
            if y < cap:
                kern[x, y] += pmf[a]
        kern[x, cap] = 1.0 - kern[x, :cap].sum()
    return kern


def brute_force_two_message_gain(rate_1, rate_2, cap):
    """Best average latency over all deterministic stationary policies.

    States are capped buffered counts (i, j); actions idle, serve 1, serve 2.
    With no energy term, serving an empty message equals idling, so such
    duplicates are skipped. Each policy is scored through its stationary
    distribution, solved in batches.
    """
    k1, k2 = capped_kernel(rate_1, cap), capped_kernel(rate_2, cap)
    size = cap + 1
    states = [(i, j) for i in range(size) for j in range(size)]
    n_s = len(states)
    # per state, per action: transition row and cost
    rows = np.zeros((n_s, 3, n_s))
    for s, (i, j) in enumerate(states):
        for act in range(3):
            r1 = k1[0] if act == 1 else k1[i]
            r2 = k2[0] if act == 2 else k2[j]
            rows[s, act] = np.outer(r1, r2).ravel()
    cost = np.array([i + j for i, j in states], dtype=float)
    choices = []
    for i, j in states:
        opts = [0]
        if i > 0:
            opts.append(1)
        if j > 0:
            opts.append(2)
        choices.append(opts)

    best = math.inf
    all_policies = itertools.product(*choices)
    chunk = 50_000
    while True:
        batch = list(itertools.islice(all_policies, chunk))
        if not batch:
            break
        acts = np.array(batch)                       # (B, n_s)
        P = rows[np.arange(n_s)[None, :], acts]      # (B, n_s, n_s)
        A = np.transpose(P, (0, 2, 1)) - np.eye(n_s)
        A[:, -1, :] = 1.0
        rhs = np.zeros(n_s)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, np.broadcast_to(rhs, (len(batch), n_s))[..., None])[..., 0]
        gains = pi @ cost
        best = min(best, float(gains.min()))
    return best


def threshold_cycle_mc(rate, threshold, n_slots, seed):
    """Average buffered count per slot of a threshold rule, by direct simulation."""
    rng = np.random.default_rng(seed)
    arrivals = rng.poisson(rate, size=n_slots)
    q = total = 0
    starts = 0
    for a in arrivals:
        total += q
        if q > threshold:
            q = 0
            starts += 1
        q += a
    return total / n_slots, starts / n_slots
