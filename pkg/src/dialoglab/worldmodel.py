"""Learned user simulator M(s,a): multi-task net predicting the next state
vector, the step reward, and a success/failure/continue termination class.

Architecture: two shared hidden layers feeding three task-specific branches
(one hidden layer each). Input is the state vector concatenated with a
one-hot action. Trained exclusively on real-experience tuples; rollouts
against it produce the cheap simulated dialogs of the planning loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .agent import QAgent, select_action
from .env import (FILLED, Dialog, DialogAct, StateLayout, TrackerState,
                  Turn, count_matches, decode_state, encode_state,
                  grounded_constraints, initial_state, resolve_action)
from .ontology import Goal

TERM_CLASSES = ("success", "failure", "continue")
TERM_SUCCESS, TERM_FAILURE, TERM_CONTINUE = 0, 1, 2


@dataclass
class WorldModel:
    trunk: nn.Network         # shared: input -> 80 -> 80
    state_head: nn.Network    # 80 -> 80 -> state_dim, sigmoid
    reward_head: nn.Network   # 80 -> 80 -> 1, linear
    term_head: nn.Network     # 80 -> 80 -> 3, logits
    opts: dict[str, nn.OptimizerState]
    n_actions: int
    L: int

    @property
    def state_dim(self) -> int:
        return self.state_head.output_dim

    def networks(self) -> dict[str, nn.Network]:
        return {"trunk": self.trunk, "state": self.state_head,
                "reward": self.reward_head, "term": self.term_head}


def make_worldmodel(state_dim: int, n_actions: int, rng: np.random.Generator,
                    L: int = 40, hidden: int = 80, lr: float = 1e-3) -> WorldModel:
    in_dim = state_dim + n_actions
    trunk = nn.init_network([in_dim, hidden, hidden], ["relu", "relu"], rng)
    state_head = nn.init_network([hidden, hidden, state_dim], ["relu", "sigmoid"], rng)
    reward_head = nn.init_network([hidden, hidden, 1], ["relu", "linear"], rng)
    term_head = nn.init_network([hidden, hidden, 3], ["relu", "linear"], rng)
    m = WorldModel(trunk=trunk, state_head=state_head, reward_head=reward_head,
                   term_head=term_head, opts={}, n_actions=n_actions, L=L)
    m.opts = {name: nn.make_optimizer(net, lr=lr) for name, net in m.networks().items()}
    return m


def encode_input(m: WorldModel, s: np.ndarray, a) -> np.ndarray:
    s = np.atleast_2d(np.asarray(s, dtype=float))
    actions = np.atleast_1d(np.asarray(a, dtype=int))
    one_hot = np.zeros((s.shape[0], m.n_actions))
    one_hot[np.arange(s.shape[0]), actions] = 1.0
    return np.concatenate([s, one_hot], axis=1)


def wm_forward(m: WorldModel, x: np.ndarray):
    h = nn.forward(m.trunk, x)
    return (h, nn.forward(m.state_head, h), nn.forward(m.reward_head, h),
            nn.forward(m.term_head, h))


def predict(m: WorldModel, s: np.ndarray, a: int, rng: np.random.Generator):
    """One model step: (s', r, done, outcome). Terminal rewards are forced
    to the exact domain values; only the continue-case reward is trusted."""
    x = encode_input(m, s, a)
    _, s_next, reward, logits = wm_forward(m, x)
    s_next = np.clip(s_next[0], 0.0, 1.0)
    probs = nn.softmax(logits[0])
    cls = int(rng.choice(3, p=probs))
    if cls == TERM_SUCCESS:
        return s_next, 2.0 * m.L - 1.0, True, "success"
    if cls == TERM_FAILURE:
        return s_next, -float(m.L) - 1.0, True, "failure"
    r = float(np.clip(reward[0, 0], -float(m.L), 2.0 * m.L))
    return s_next, r, False, "ongoing"


def turn_term_class(t: Turn) -> int:
    if not t.done:
        return TERM_CONTINUE
    return TERM_SUCCESS if t.r > 0 else TERM_FAILURE


def train_worldmodel(m: WorldModel, batch: list[Turn]):
    """One gradient step on MSE(s') + MSE(r) + xent(termination).

    Accepts only real-experience turns: the model must never fit its own
    rollouts or relabeled hindsight rewards.
    """
    if not batch:
        raise ValueError("empty world-model batch")
    if any(t.source != "real" for t in batch):
        raise ValueError("world model trains on real experience only")
    x = encode_input(m, np.stack([t.s for t in batch]), [t.a for t in batch])
    y_state = np.stack([t.s_next for t in batch])
    y_reward = np.array([[t.r] for t in batch])
    y_cls = np.array([turn_term_class(t) for t in batch])

    h, s_out, r_out, logits = wm_forward(m, x)
    state_mse, g_state = nn.mse_loss(s_out, y_state)
    reward_mse, g_reward = nn.mse_loss(r_out, y_reward)
    term_xent, g_term = nn.softmax_xent_loss(logits, y_cls)

    b_state = nn.backward(m.state_head, h, g_state)
    b_reward = nn.backward(m.reward_head, h, g_reward)
    b_term = nn.backward(m.term_head, h, g_term)
    g_h = b_state.input_grad + b_reward.input_grad + b_term.input_grad
    b_trunk = nn.backward(m.trunk, x, g_h)

    nn.rmsprop_step(m.state_head, b_state, m.opts["state"])
    nn.rmsprop_step(m.reward_head, b_reward, m.opts["reward"])
    nn.rmsprop_step(m.term_head, b_term, m.opts["term"])
    nn.rmsprop_step(m.trunk, b_trunk, m.opts["trunk"])
    return state_mse, reward_mse, term_xent


def wm_loss(m: WorldModel, x, y_state, y_reward, y_cls) -> float:
    _, s_out, r_out, logits = wm_forward(m, x)
    return (nn.mse_loss(s_out, y_state)[0] + nn.mse_loss(r_out, y_reward)[0]
            + nn.softmax_xent_loss(logits, y_cls)[0])


def wm_finite_diff_check(m: WorldModel, batch: list[Turn], step: float = 1e-5) -> float:
    """Composite-loss gradient check across trunk and all three heads."""
    x = encode_input(m, np.stack([t.s for t in batch]), [t.a for t in batch])
    y_state = np.stack([t.s_next for t in batch])
    y_reward = np.array([[t.r] for t in batch])
    y_cls = np.array([turn_term_class(t) for t in batch])

    h, s_out, r_out, logits = wm_forward(m, x)
    _, g_state = nn.mse_loss(s_out, y_state)
    _, g_reward = nn.mse_loss(r_out, y_reward)
    _, g_term = nn.softmax_xent_loss(logits, y_cls)
    b_state = nn.backward(m.state_head, h, g_state)
    b_reward = nn.backward(m.reward_head, h, g_reward)
    b_term = nn.backward(m.term_head, h, g_term)
    g_h = b_state.input_grad + b_reward.input_grad + b_term.input_grad
    b_trunk = nn.backward(m.trunk, x, g_h)
    analytic = {"trunk": b_trunk, "state": b_state, "reward": b_reward, "term": b_term}

    worst = 0.0
    for name, net in m.networks().items():
        bundle = analytic[name]
        for li, layer in enumerate(net.layers):
            for param, grad in ((layer.w, bundle.dw[li]), (layer.b, bundle.db[li])):
                flat = param.ravel()
                numeric = np.empty_like(flat)
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + step
                    hi = wm_loss(m, x, y_state, y_reward, y_cls)
                    flat[j] = orig - step
                    lo = wm_loss(m, x, y_state, y_reward, y_cls)
                    flat[j] = orig
                    numeric[j] = (hi - lo) / (2.0 * step)
                worst = max(worst, nn.max_rel_error(grad, numeric.reshape(param.shape)))
    return worst


def integrate_prediction(layout: StateLayout, prev: TrackerState,
                         agent_act: DialogAct, decoded: TrackerState,
                         db, step: int) -> TrackerState:
    """Merge a model prediction into the dialog manager's own bookkeeping.

    The model is only trusted for what the (simulated) user did: belief
    shifts, new requests, whether an offer/answer was accepted. Everything
    the agent side determines itself — its last act, which constraints it
    has asked about, the step counter, the db match count under current
    beliefs — is recomputed exactly, and monotone tracker fields (fills,
    reveals, the proposal latch) never regress. Belief blocks snap to the
    nearest one-hot, since real trackers never hold fractional beliefs.
    """
    belief = decoded.belief_vec.copy()
    base = layout.belief_block.start
    for name in layout.constraint_names:
        sl = layout.belief_slices[name]
        block = belief[sl.start - base : sl.stop - base]
        j = int(np.argmax(block))
        block[:] = 0.0
        block[j] = 1.0

    asked = set(prev.asked_constraints)
    if agent_act.intent == "request_constraint_slot" and agent_act.slots:
        asked.add(next(iter(agent_act.slots)))

    filled = dict(prev.filled_requests)
    if agent_act.intent == "inform_requested_slot":
        for slot in decoded.filled_requests:
            filled.setdefault(slot, FILLED)
    match = prev.match_proposed or (agent_act.intent == "inform_match_found"
                                    and decoded.match_proposed)

    out = TrackerState(
        last_agent_act=agent_act,
        last_user_act=decoded.last_user_act,
        belief_vec=belief,
        filled_requests=filled,
        requested_slots=prev.requested_slots | decoded.requested_slots,
        asked_constraints=frozenset(asked),
        match_proposed=match,
        turn_count=step,
        db_match_count=0,
    )
    out.db_match_count = count_matches(db, grounded_constraints(layout, out))
    return out


def _success_eligible(tracker: TrackerState) -> bool:
    """Observable necessary conditions for the task-completion protocol:
    the user only closes happy after accepting an offer and having every
    revealed request answered."""
    return (tracker.match_proposed
            and len(tracker.requested_slots) > 0
            and set(tracker.requested_slots) <= set(tracker.filled_requests))


def simulate_dialog(agent: QAgent, m: WorldModel, goal: Goal, layout: StateLayout,
                    db, rng: np.random.Generator, epsilon: float = 0.1,
                    dialog_id: int = 0, max_turns: int | None = None) -> Dialog:
    """Roll one dialog against the learned model instead of the scripted user.

    Raw model outputs drift off the space of valid tracker encodings, and
    feeding drifted vectors back in compounds the error until the termination
    head fires spuriously. Each prediction is therefore folded into a real
    tracker via integrate_prediction and re-encoded before it is stored or
    fed back, and sampled terminations are vetoed when the dialog-manager
    protocol makes them impossible: success requires an accepted offer with
    all revealed requests answered, and a failure can only follow the agent
    hanging up or the turn budget running out (truncation at L model steps
    is a failure, mirroring the real environment).

    `max_turns` bounds the rollout below L. A budget-truncated rollout counts
    as a failure for bookkeeping, but its last tuple stays non-terminal: the
    real process does not end at that turn, so writing a terminal reward
    there would train the agent on a different MDP.
    """
    cap = m.L if max_turns is None else min(max_turns, m.L)
    tracker, s = initial_state(layout, db, goal, m.L)
    dialog = Dialog(dialog_id=dialog_id, goal=goal, turns=[], outcome="ongoing",
                    source="simulated")
    pre_tracker = tracker
    for i in range(cap):
        a = select_action(agent, s, epsilon, rng)
        agent_act = resolve_action(layout, pre_tracker, db, a)
        s_raw, r, done, outcome = predict(m, s, a, rng)
        decoded = decode_state(layout, s_raw, m.L)
        post_tracker = integrate_prediction(layout, pre_tracker, agent_act,
                                            decoded, db, i + 1)
        if done and outcome == "success" and not _success_eligible(post_tracker):
            done, outcome, r = False, "ongoing", -1.0
        if done and outcome == "failure" and agent_act.intent != "closing":
            done, outcome, r = False, "ongoing", -1.0
        if not done and i == m.L - 1:
            done, outcome, r = True, "failure", -float(m.L) - 1.0
        s_next = encode_state(layout, post_tracker, m.L)
        dialog.turns.append(Turn(
            s=s, a=a, r=r, s_next=s_next, done=done,
            tracker_snapshot=pre_tracker, tracker_after=post_tracker,
            agent_act=agent_act,
            user_act=decoded.last_user_act or DialogAct("user", "confirm", {}),
            source="simulated"))
        if done:
            dialog.outcome = outcome
            break
        s, pre_tracker = s_next, post_tracker
    if dialog.outcome == "ongoing":
        dialog.outcome = "failure"  # out of budget; tuples stay non-terminal
    return dialog
