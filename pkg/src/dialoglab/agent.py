"""DQN dialog agent: Q-network + target network, replay, one-step TD updates.

The same machinery drives the dialog policy (11 actions over state
vectors) and, through small input/output dims, the meta-level budget
picker. Targets are computed from the frozen target network only; no
gradient ever reaches it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import nn
from .env import N_AGENT_ACTIONS, Turn

DEFAULT_GAMMA = 0.95
DEFAULT_HIDDEN = 80
MINIBATCH_SIZE = 16
BUFFER_CAPACITY = 5000


@dataclass
class QAgent:
    q_net: nn.Network
    target_net: nn.Network
    opt: nn.OptimizerState
    gamma: float = DEFAULT_GAMMA
    epsilon: float = 0.1

    @property
    def n_actions(self) -> int:
        return self.q_net.output_dim


def make_agent(input_dim: int, rng: np.random.Generator,
               n_actions: int = N_AGENT_ACTIONS, hidden: int = DEFAULT_HIDDEN,
               lr: float = 1e-3, gamma: float = DEFAULT_GAMMA,
               epsilon: float = 0.1) -> QAgent:
    q_net = nn.init_network([input_dim, hidden, n_actions], ["relu", "linear"], rng)
    # large eps keeps plateau updates proportional to the (small) TD error
    # instead of scale-free, which stops a converged greedy policy from
    # random-walking apart under continued one-step training
    return QAgent(q_net=q_net, target_net=q_net.copy(),
                  opt=nn.make_optimizer(q_net, lr=lr, eps=1e-2),
                  gamma=gamma, epsilon=epsilon)


def select_action(agent: QAgent, s: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(agent.n_actions))
    q = nn.forward(agent.q_net, s)
    return int(np.argmax(q))  # argmax takes the lowest index on ties


class ReplayBuffer:
    """Bounded FIFO tuple store with uniform (with replacement) sampling."""

    def __init__(self, capacity: int = BUFFER_CAPACITY, label: str = "real"):
        self.capacity = capacity
        self.label = label
        self.items: deque[Turn] = deque(maxlen=capacity)

    def push(self, turn: Turn) -> None:
        self.items.append(turn)

    def extend(self, turns) -> None:
        for t in turns:
            self.items.append(t)

    def __len__(self) -> int:
        return len(self.items)


def sample_minibatch(buffers: list[ReplayBuffer], n: int,
                     rng: np.random.Generator) -> list[Turn]:
    """Uniform-with-replacement draw over the concatenation of the buffers."""
    if n == 0:
        return []
    pools = [b.items for b in buffers if len(b) > 0]
    if not pools:
        raise ValueError("all replay buffers are empty")
    sizes = np.array([len(p) for p in pools])
    offsets = np.cumsum(sizes)
    total = int(offsets[-1])
    draws = rng.integers(total, size=n)
    batch = []
    for d in draws:
        j = int(np.searchsorted(offsets, d, side="right"))
        batch.append(pools[j][int(d - (offsets[j - 1] if j else 0))])
    return batch


def td_targets(agent: QAgent, batch: list[Turn]) -> np.ndarray:
    s_next = np.stack([t.s_next for t in batch])
    next_best = np.max(nn.forward(agent.target_net, s_next), axis=1)
    r = np.array([t.r for t in batch])
    cont = np.array([0.0 if t.done else 1.0 for t in batch])
    return r + agent.gamma * cont * next_best


def td_train_step(agent: QAgent, batch: list[Turn]) -> float:
    """One minibatch step on the squared TD error; returns the pre-step loss."""
    if not batch:
        raise ValueError("empty minibatch")
    y = td_targets(agent, batch)
    s = np.stack([t.s for t in batch])
    q_all = nn.forward(agent.q_net, s)
    idx = np.arange(len(batch))
    actions = np.array([t.a for t in batch])
    td_err = q_all[idx, actions] - y
    loss = float(np.mean(td_err * td_err))
    # loss touches only the taken action's output
    out_grad = np.zeros_like(q_all)
    out_grad[idx, actions] = 2.0 * td_err / len(batch)
    grads = nn.backward(agent.q_net, s, out_grad)
    nn.rmsprop_step(agent.q_net, grads, agent.opt)
    return loss


def sync_target(agent: QAgent) -> None:
    agent.target_net = agent.q_net.copy()
