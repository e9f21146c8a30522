"""Slot-filling dialog MDP: scripted user, state tracker, rewards, encoding.

The agent side speaks a fixed 11-intent catalogue; slot arguments are
resolved inside the environment by deterministic heuristics, so the action
space stays 11 regardless of ontology size. The user is a deterministic
agenda follower seeded from a sampled goal: it answers constraint
questions truthfully, reveals its request slots one at a time, denies
contradictions, and thanks (ending the dialog successfully) once a
consistent booking was proposed and every request is filled.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .ontology import Goal, GoalTemplateSet, Ontology, sample_goal

AGENT_INTENTS = (
    "greeting",
    "thanks",
    "deny",
    "confirm_question",
    "confirm_answer",
    "closing",
    "request_constraint_slot",
    "request_booking_info",
    "inform_requested_slot",
    "inform_match_found",
    "inform_no_match",
)
AGENT_INTENT_INDEX = {name: i for i, name in enumerate(AGENT_INTENTS)}
N_AGENT_ACTIONS = len(AGENT_INTENTS)

USER_INTENTS = ("inform", "request", "confirm", "deny", "thanks", "closing")
USER_INTENT_INDEX = {name: i for i, name in enumerate(USER_INTENTS)}

# Placeholder fill value used when a tracker is decoded from a predicted
# state vector, where only the filled/unfilled bit survives the encoding.
FILLED = "<filled>"

DB_MATCH_CAP = 100


@dataclass
class DialogAct:
    actor: str  # "agent" | "user"
    intent: str
    slots: dict[str, str] = field(default_factory=dict)


@dataclass
class TrackerState:
    """Agent-side view of the dialog, updated once per exchange."""

    last_agent_act: DialogAct | None
    last_user_act: DialogAct | None
    belief_vec: np.ndarray  # concatenated per-slot distributions, layout order
    filled_requests: dict[str, str]
    requested_slots: frozenset[str]  # requests the user has voiced
    asked_constraints: frozenset[str]  # constraint slots the agent has asked
    match_proposed: bool
    turn_count: int
    db_match_count: int


@dataclass
class Turn:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    tracker_snapshot: TrackerState  # pre-action
    tracker_after: TrackerState
    agent_act: DialogAct
    user_act: DialogAct
    source: str = "real"  # real | simulated | hindsight


@dataclass
class Dialog:
    dialog_id: int
    goal: Goal
    turns: list[Turn]
    outcome: str  # success | failure | ongoing
    source: str = "real"

    @property
    def final_tracker(self) -> TrackerState:
        return self.turns[-1].tracker_after

    def episode_return(self) -> float:
        return float(sum(t.r for t in self.turns))


class StateLayout:
    """Index map from tracker fields to positions in the state vector.

    Block order: agent-intent one-hot (11), user-intent one-hot (6),
    per-constraint-slot belief distributions over {unknown} + pool,
    then request/progress indicator bits (filled, revealed, asked,
    match-proposed), turn fraction, normalized DB match count.
    """

    def __init__(self, ontology: Ontology):
        self.ontology = ontology
        self.all_slot_names = tuple(s.name for s in ontology.slots)
        self.constraint_names = ontology.constraint_slots
        pos = 0
        self.agent_block = slice(pos, pos + N_AGENT_ACTIONS)
        pos += N_AGENT_ACTIONS
        self.user_block = slice(pos, pos + len(USER_INTENTS))
        pos += len(USER_INTENTS)
        belief_start = pos
        self.belief_slices: dict[str, slice] = {}
        self.pools: dict[str, tuple[str, ...]] = {}
        for name in self.constraint_names:
            pool = ontology.value_pools[name]
            self.belief_slices[name] = slice(pos, pos + 1 + len(pool))
            self.pools[name] = pool
            pos += 1 + len(pool)
        self.belief_block = slice(belief_start, pos)
        self.filled_block = slice(pos, pos + len(self.all_slot_names))
        pos += len(self.all_slot_names)
        self.revealed_block = slice(pos, pos + len(self.all_slot_names))
        pos += len(self.all_slot_names)
        self.asked_block = slice(pos, pos + len(self.constraint_names))
        pos += len(self.constraint_names)
        self.match_index = pos
        pos += 1
        self.turn_index = pos
        pos += 1
        self.db_index = pos
        pos += 1
        self.dim = pos
        self.slot_pos = {n: i for i, n in enumerate(self.all_slot_names)}
        self.constraint_pos = {n: i for i, n in enumerate(self.constraint_names)}


def fresh_belief_vec(layout: StateLayout) -> np.ndarray:
    """All mass on 'unknown' (first component of each slot block)."""
    vec = np.zeros(layout.belief_block.stop - layout.belief_block.start)
    base = layout.belief_block.start
    for name in layout.constraint_names:
        vec[layout.belief_slices[name].start - base] = 1.0
    return vec


def belief_of(layout: StateLayout, tracker: TrackerState, slot_name: str) -> np.ndarray:
    sl = layout.belief_slices[slot_name]
    base = layout.belief_block.start
    return tracker.belief_vec[sl.start - base : sl.stop - base]


def grounded_constraints(layout: StateLayout, tracker: TrackerState) -> dict[str, str]:
    """Slots whose belief puts definite mass (> 0.5) on a single value."""
    out = {}
    for name in layout.constraint_names:
        dist = belief_of(layout, tracker, name)
        j = int(np.argmax(dist))
        if j > 0 and dist[j] > 0.5:
            out[name] = layout.pools[name][j - 1]
    return out


def belief_entropy(layout: StateLayout, tracker: TrackerState, slot_name: str) -> float:
    """Entropy with the 'unknown' mass spread uniformly over the pool."""
    dist = belief_of(layout, tracker, slot_name)
    pool_n = len(layout.pools[slot_name])
    probs = dist[1:] + dist[0] / pool_n
    probs = probs[probs > 1e-12]
    return float(-np.sum(probs * np.log(probs)))


def build_database(ontology: Ontology, templates: GoalTemplateSet) -> list[dict[str, str]]:
    """Deterministic in-memory table: one row per template constraint combo.

    Slots outside a template's constraint set are filled by a stable hash
    so every sampled goal is guaranteed at least one consistent row.
    """
    rows: list[dict[str, str]] = []
    seen = set()
    for t_idx, tpl in enumerate(templates.templates):
        slot_names = [name for name, _ in tpl.constraint_pools]
        pools = [pool for _, pool in tpl.constraint_pools]
        for combo in itertools.product(*pools):
            row = dict(zip(slot_names, combo))
            sig = f"{t_idx}:" + ",".join(combo)
            for slot in ontology.slots:
                if slot.name not in row:
                    pool = ontology.value_pools[slot.name]
                    h = zlib.crc32(f"{sig}|{slot.name}".encode())
                    row[slot.name] = pool[h % len(pool)]
            key = tuple(sorted(row.items()))
            if key not in seen:
                seen.add(key)
                rows.append(row)
    return rows


def count_matches(db: list[dict[str, str]], grounded: dict[str, str]) -> int:
    if not grounded:
        return len(db)
    return sum(1 for row in db if all(row[k] == v for k, v in grounded.items()))


def first_consistent_row(db, grounded) -> dict[str, str] | None:
    for row in db:
        if all(row[k] == v for k, v in grounded.items()):
            return row
    return None


def encode_state(layout: StateLayout, tracker: TrackerState, L: int) -> np.ndarray:
    vec = np.zeros(layout.dim)
    if tracker.last_agent_act is not None:
        vec[layout.agent_block.start + AGENT_INTENT_INDEX[tracker.last_agent_act.intent]] = 1.0
    if tracker.last_user_act is not None:
        vec[layout.user_block.start + USER_INTENT_INDEX[tracker.last_user_act.intent]] = 1.0
    vec[layout.belief_block] = tracker.belief_vec
    for name in tracker.filled_requests:
        vec[layout.filled_block.start + layout.slot_pos[name]] = 1.0
    for name in tracker.requested_slots:
        vec[layout.revealed_block.start + layout.slot_pos[name]] = 1.0
    for name in tracker.asked_constraints:
        vec[layout.asked_block.start + layout.constraint_pos[name]] = 1.0
    if tracker.match_proposed:
        vec[layout.match_index] = 1.0
    vec[layout.turn_index] = tracker.turn_count / L
    vec[layout.db_index] = min(tracker.db_match_count, DB_MATCH_CAP) / DB_MATCH_CAP
    return vec


def decode_state(layout: StateLayout, vec: np.ndarray, L: int) -> TrackerState:
    """Approximate tracker readback from an arbitrary vector in [0,1]^d.

    Used for turns produced by a learned transition model, where no real
    tracker exists: beliefs are renormalized per block, indicator bits are
    thresholded, and filled request values collapse to a sentinel.
    """
    vec = np.clip(np.asarray(vec, dtype=float), 0.0, 1.0)
    belief = vec[layout.belief_block].copy()
    base = layout.belief_block.start
    for name in layout.constraint_names:
        sl = layout.belief_slices[name]
        block = belief[sl.start - base : sl.stop - base]
        total = block.sum()
        if total <= 1e-12:
            block[:] = 0.0
            block[0] = 1.0
        else:
            block /= total
    filled = {}
    requested = set()
    for name, i in layout.slot_pos.items():
        if vec[layout.filled_block.start + i] >= 0.5:
            filled[name] = FILLED
        if vec[layout.revealed_block.start + i] >= 0.5:
            requested.add(name)
    asked = {
        name for name, i in layout.constraint_pos.items()
        if vec[layout.asked_block.start + i] >= 0.5
    }

    def act_from(block: slice, names, actor):
        j = int(np.argmax(vec[block]))
        if vec[block][j] < 0.5:
            return None
        return DialogAct(actor, names[j], {})

    return TrackerState(
        last_agent_act=act_from(layout.agent_block, AGENT_INTENTS, "agent"),
        last_user_act=act_from(layout.user_block, USER_INTENTS, "user"),
        belief_vec=belief,
        filled_requests=filled,
        requested_slots=frozenset(requested),
        asked_constraints=frozenset(asked),
        match_proposed=vec[layout.match_index] >= 0.5,
        turn_count=int(round(vec[layout.turn_index] * L)),
        db_match_count=int(round(vec[layout.db_index] * DB_MATCH_CAP)),
    )


@dataclass
class UserAgenda:
    goal: Goal
    constraint_map: dict[str, str]
    pending_requests: tuple[str, ...]
    filled: set[str] = field(default_factory=set)
    confirmed: bool = False

    @classmethod
    def from_goal(cls, goal: Goal) -> "UserAgenda":
        return cls(goal=goal, constraint_map=goal.constraint_map,
                   pending_requests=goal.requests)

    def unfilled(self) -> list[str]:
        return [r for r in self.pending_requests if r not in self.filled]

    def satisfied(self) -> bool:
        return self.confirmed and not self.unfilled()

    def opening_act(self) -> DialogAct:
        slot, value = self.goal.constraints[0]
        return DialogAct("user", "inform", {slot: value})


def _contradicts(constraint_map: dict[str, str], slots: dict[str, str]) -> bool:
    return any(k in constraint_map and constraint_map[k] != v for k, v in slots.items())


def scripted_user_respond(agenda: UserAgenda, agent_act: DialogAct,
                          rng: np.random.Generator | None = None,
                          noise_rate: float = 0.0,
                          pools: dict[str, tuple[str, ...]] | None = None) -> DialogAct:
    """Deterministic agenda rules; mutates the agenda's fill/confirm state."""
    intent = agent_act.intent

    if intent == "closing":
        return DialogAct("user", "closing", {})

    if intent == "request_constraint_slot" and agent_act.slots:
        slot = next(iter(agent_act.slots))
        if slot in agenda.constraint_map:
            value = agenda.constraint_map[slot]
            if noise_rate > 0.0 and rng is not None and rng.random() < noise_rate:
                pool = pools[slot]
                wrong = [v for v in pool if v != value]
                if wrong:
                    value = wrong[rng.integers(len(wrong))]
            return DialogAct("user", "inform", {slot: value})
        # no preference on that slot
        return DialogAct("user", "inform", {})

    if intent == "inform_requested_slot" and agent_act.slots:
        slot, value = next(iter(agent_act.slots.items()))
        if _contradicts(agenda.constraint_map, {slot: value}):
            return DialogAct("user", "deny", {slot: value})
        if slot in agenda.pending_requests:
            agenda.filled.add(slot)
        if agenda.satisfied():
            return DialogAct("user", "thanks", {})
        unfilled = agenda.unfilled()
        if unfilled:
            return DialogAct("user", "request", {unfilled[0]: ""})
        return DialogAct("user", "confirm", {slot: value})

    if intent == "inform_match_found":
        if not agent_act.slots or _contradicts(agenda.constraint_map, agent_act.slots):
            return DialogAct("user", "deny", {})
        if any(s not in agent_act.slots for s in agenda.constraint_map):
            return DialogAct("user", "deny", {})
        agenda.confirmed = True
        if agenda.satisfied():
            return DialogAct("user", "thanks", {})
        return DialogAct("user", "request", {agenda.unfilled()[0]: ""})

    if intent == "inform_no_match":
        return DialogAct("user", "deny", {})

    # Social or uninterpretable acts: re-voice the next outstanding request,
    # otherwise a bare acknowledgment.
    unfilled = agenda.unfilled()
    if unfilled:
        return DialogAct("user", "request", {unfilled[0]: ""})
    return DialogAct("user", "confirm", {})


def tracker_update(layout: StateLayout, tracker: TrackerState, agent_act: DialogAct,
                   user_act: DialogAct, db) -> TrackerState:
    belief = tracker.belief_vec.copy()
    base = layout.belief_block.start
    filled = dict(tracker.filled_requests)
    requested = set(tracker.requested_slots)
    asked = set(tracker.asked_constraints)
    match_proposed = tracker.match_proposed

    if agent_act.intent == "request_constraint_slot" and agent_act.slots:
        asked.add(next(iter(agent_act.slots)))

    if user_act.intent == "inform":
        for slot, value in user_act.slots.items():
            if slot in layout.belief_slices:
                sl = layout.belief_slices[slot]
                block = belief[sl.start - base : sl.stop - base]
                block[:] = 0.0
                block[1 + layout.pools[slot].index(value)] = 1.0
    elif user_act.intent == "request":
        requested.update(user_act.slots)
    if user_act.intent != "deny":
        if agent_act.intent == "inform_requested_slot" and agent_act.slots:
            slot, value = next(iter(agent_act.slots.items()))
            filled[slot] = value
        elif agent_act.intent == "inform_match_found" and agent_act.slots:
            match_proposed = True

    new = TrackerState(
        last_agent_act=agent_act,
        last_user_act=user_act,
        belief_vec=belief,
        filled_requests=filled,
        requested_slots=frozenset(requested),
        asked_constraints=frozenset(asked),
        match_proposed=match_proposed,
        turn_count=tracker.turn_count + 1,
        db_match_count=tracker.db_match_count,
    )
    new.db_match_count = count_matches(db, grounded_constraints(layout, new))
    return new


def resolve_action(layout: StateLayout, tracker: TrackerState, db,
                   action_index: int) -> DialogAct:
    """Attach slot arguments to an abstract intent, deterministically."""
    intent = AGENT_INTENTS[action_index]

    if intent == "request_constraint_slot":
        candidates = [n for n in layout.constraint_names if n not in tracker.asked_constraints]
        if not candidates:
            candidates = list(layout.constraint_names)
        # most uncertain slot first; name order breaks ties
        entropies = {n: belief_entropy(layout, tracker, n) for n in candidates}
        best = max(entropies.values())
        slot = sorted(n for n, h in entropies.items() if h >= best - 1e-12)[0]
        return DialogAct("agent", intent, {slot: ""})

    if intent == "inform_requested_slot":
        unfilled = sorted(tracker.requested_slots - set(tracker.filled_requests))
        if not unfilled:
            return DialogAct("agent", intent, {})
        slot = unfilled[0]
        row = first_consistent_row(db, grounded_constraints(layout, tracker))
        value = row[slot] if row else layout.ontology.value_pools[slot][0]
        return DialogAct("agent", intent, {slot: value})

    if intent == "inform_match_found":
        row = first_consistent_row(db, grounded_constraints(layout, tracker))
        if row is None:
            return DialogAct("agent", intent, {})
        return DialogAct("agent", intent, {n: row[n] for n in layout.constraint_names})

    return DialogAct("agent", intent, {})


def initial_state(layout: StateLayout, db, goal: Goal,
                  L: int) -> tuple[TrackerState, np.ndarray]:
    """Tracker and state vector after the user's scripted opening act.

    Pure in the goal, so learned-model rollouts can start from the same
    state a real dialog with that goal would.
    """
    opening = UserAgenda.from_goal(goal).opening_act()
    base = TrackerState(
        last_agent_act=None, last_user_act=None, belief_vec=fresh_belief_vec(layout),
        filled_requests={}, requested_slots=frozenset(),
        asked_constraints=frozenset(), match_proposed=False,
        turn_count=0, db_match_count=len(db),
    )
    # fold the opening inform into the initial beliefs; turn count stays 0
    folded = tracker_update(layout, base, DialogAct("agent", "greeting", {}),
                            opening, db)
    tracker = replace(folded, last_agent_act=None, turn_count=0)
    return tracker, encode_state(layout, tracker, L)


class DialogEnv:
    """One dialog at a time against the scripted user."""

    def __init__(self, ontology: Ontology, templates: GoalTemplateSet,
                 L: int = 40, noise_rate: float = 0.0):
        self.ontology = ontology
        self.templates = templates
        self.L = L
        self.noise_rate = noise_rate
        self.layout = StateLayout(ontology)
        self.db = build_database(ontology, templates)
        self.agenda: UserAgenda | None = None
        self.tracker: TrackerState | None = None
        self.state_vec: np.ndarray | None = None

    def reset(self, rng: np.random.Generator, goal: Goal | None = None):
        if goal is None:
            goal = sample_goal(self.templates, rng)
        self.agenda = UserAgenda.from_goal(goal)
        self.tracker, self.state_vec = initial_state(self.layout, self.db, goal, self.L)
        return goal, self.tracker, self.state_vec

    def step(self, action_index: int, rng: np.random.Generator) -> Turn:
        if self.tracker is None:
            raise RuntimeError("step before reset")
        if self.tracker.turn_count >= self.L:
            raise RuntimeError("stepping a terminal dialog")
        pre = self.tracker
        s = self.state_vec
        agent_act = resolve_action(self.layout, pre, self.db, action_index)
        user_act = scripted_user_respond(self.agenda, agent_act, rng,
                                         self.noise_rate, self.layout.pools)
        post = tracker_update(self.layout, pre, agent_act, user_act, self.db)

        if user_act.intent == "thanks":
            done, outcome = True, "success"
        elif agent_act.intent == "closing":
            done, outcome = True, "failure"
        elif post.turn_count >= self.L:
            done, outcome = True, "failure"
            user_act = DialogAct("user", "closing", {})
            post = replace(post, last_user_act=user_act)
        else:
            done, outcome = False, "ongoing"

        if outcome == "success":
            r = 2.0 * self.L - 1.0
        elif outcome == "failure":
            r = -float(self.L) - 1.0
        else:
            r = -1.0

        s_next = encode_state(self.layout, post, self.L)
        self.tracker = None if done else post
        self.state_vec = None if done else s_next
        self._last_outcome = outcome
        return Turn(s=s, a=action_index, r=r, s_next=s_next, done=done,
                    tracker_snapshot=pre, tracker_after=post,
                    agent_act=agent_act, user_act=user_act, source="real")


def run_dialog(env: DialogEnv, policy, rng: np.random.Generator,
               goal: Goal | None = None, dialog_id: int = 0,
               on_turn=None) -> Dialog:
    """Roll one full dialog; `policy(state_vector) -> action index`.

    `on_turn(dialog_so_far)` fires after each appended turn, for callers
    that harvest segments incrementally.
    """
    goal, _tracker, state = env.reset(rng, goal)
    dialog = Dialog(dialog_id=dialog_id, goal=goal, turns=[], outcome="ongoing")
    while True:
        action = policy(state)
        turn = env.step(action, rng)
        dialog.turns.append(turn)
        if on_turn is not None:
            on_turn(dialog)
        if turn.done:
            dialog.outcome = env._last_outcome
            return dialog
        state = turn.s_next


def rule_policy(layout: StateLayout, tracker: TrackerState) -> int:
    """Hand-written solver: ground every constraint slot, propose the match,
    then answer requests as they surface."""
    if any(n not in tracker.asked_constraints for n in layout.constraint_names):
        return AGENT_INTENT_INDEX["request_constraint_slot"]
    if tracker.requested_slots - set(tracker.filled_requests):
        return AGENT_INTENT_INDEX["inform_requested_slot"]
    if not tracker.match_proposed:
        return AGENT_INTENT_INDEX["inform_match_found"]
    return AGENT_INTENT_INDEX["request_booking_info"]


def run_rule_dialog(env: DialogEnv, rng: np.random.Generator,
                    goal: Goal | None = None, dialog_id: int = 0) -> Dialog:
    def policy(_state):
        return rule_policy(env.layout, env.tracker)

    return run_dialog(env, policy, rng, goal, dialog_id)


def dialog_success(d: Dialog) -> bool:
    """Re-derive success from the recorded turns alone.

    True iff some booking proposal matched every goal constraint and, by
    the end, every requested slot was filled without contradicting the
    constraints. Decoded (simulated) trackers carry sentinel fills, which
    count as consistent.
    """
    if d.outcome == "ongoing":
        raise ValueError("dialog_success on an ongoing dialog")
    cmap = d.goal.constraint_map
    proposed_ok = any(
        t.agent_act is not None
        and t.agent_act.intent == "inform_match_found"
        and t.agent_act.slots
        and all(t.agent_act.slots.get(k) == v for k, v in cmap.items())
        for t in d.turns
    )
    if not proposed_ok:
        return False
    filled = d.final_tracker.filled_requests
    for slot in d.goal.requests:
        value = filled.get(slot)
        if value is None:
            return False
        if value != FILLED and cmap.get(slot, value) != value:
            return False
    return True
