"""Adaptive simulation-budget coordinator: a meta-DQN that watches recent
training performance and picks k, the number of model-based dialogs to run
per real dialog.

The meta-state is [SR, R, change in SR, change in R] over consecutive
training rounds; the meta-reward pays for success-rate gains, discounted
by the share of cheap interactions used to get them.
"""

from __future__ import annotations

import logging

import numpy as np

from .agent import (MINIBATCH_SIZE, QAgent, ReplayBuffer, make_agent,
                    sample_minibatch, select_action, sync_target,
                    td_train_step)
from .env import DialogAct, Turn

log = logging.getLogger(__name__)

DEFAULT_K_MAX = 20
DEFAULT_HIDDEN = 64
ADAPTATION_DIM = 4

_META_ACT = DialogAct("agent", "greeting", {})


def adaptation_state(sr_i: float, r_i: float, sr_prev: float, r_prev: float,
                     i: int) -> np.ndarray:
    if i == 0:
        return np.zeros(ADAPTATION_DIM)
    return np.array([sr_i, r_i, sr_i - sr_prev, r_i - r_prev])


def normalize_avg_reward(raw_avg_reward: float, L: int) -> float:
    """Affine map of the attainable per-dialog return range onto [0,1]."""
    lo, hi = -2.0 * L, 2.0 * L - 1.0
    if raw_avg_reward < lo or raw_avg_reward > hi:
        log.warning("average reward %.3f outside [%s, %s]; clamping",
                    raw_avg_reward, lo, hi)
        raw_avg_reward = min(max(raw_avg_reward, lo), hi)
    return (raw_avg_reward + 2.0 * L) / (4.0 * L - 1.0)


def coordinator_reward(sr_i: float, sr_prev: float, k_i: int) -> float:
    if sr_i == 0.0:
        return 0.0  # the 0/0 case of the increment ratio
    return ((sr_i - sr_prev) / sr_i) * (k_i / (k_i + 1.0))


class CoordinatorAgent:
    """Meta-DQN over adaptation states; actions are k in {1..k_max}."""

    def __init__(self, rng: np.random.Generator, k_max: int = DEFAULT_K_MAX,
                 hidden: int = DEFAULT_HIDDEN, lr: float = 1e-3,
                 gamma: float = 0.95, epsilon: float = 0.1,
                 buffer_capacity: int = 5000):
        self.k_max = k_max
        self.agent: QAgent = make_agent(ADAPTATION_DIM, rng, n_actions=k_max,
                                        hidden=hidden, lr=lr, gamma=gamma,
                                        epsilon=epsilon)
        self.buffer = ReplayBuffer(capacity=buffer_capacity, label="coordinator")

    def store(self, s: np.ndarray, k: int, r: float, s_next: np.ndarray) -> None:
        # meta-transitions reuse the Turn container; the meta-MDP never terminates
        self.buffer.push(Turn(s=s, a=k - 1, r=r, s_next=s_next, done=False,
                              tracker_snapshot=None, tracker_after=None,
                              agent_act=_META_ACT, user_act=_META_ACT,
                              source="coordinator"))


def select_k(c: CoordinatorAgent, s: np.ndarray, epsilon: float,
             rng: np.random.Generator) -> int:
    return select_action(c.agent, s, epsilon, rng) + 1


def train_coordinator(c: CoordinatorAgent, rng: np.random.Generator,
                      n: int = MINIBATCH_SIZE) -> float | None:
    """One minibatch TD step plus a target sync; skips on an empty buffer."""
    if len(c.buffer) == 0:
        log.info("coordinator buffer empty; skipping update")
        return None
    loss = td_train_step(c.agent, sample_minibatch([c.buffer], n, rng))
    sync_target(c.agent)
    return loss
