"""Hindsight dialog synthesis: harvest goal-fragment segments from every
dialog, then stitch compatible head/tail pairs into successful dialogs.

A head is the shortest prefix that newly completes some subgoal of its
dialog's goal; a tail is what remains of a successful dialog after such a
prefix. Two segments stitch when they completed the same subgoal and the
belief state at the seam is close in KL divergence. Stitched dialogs get
success-shaped rewards and feed the simulated-experience buffer only.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .env import FILLED, Dialog, StateLayout, TrackerState, Turn, belief_of
from .ontology import Goal, Subgoal, enumerate_subgoals

SEGMENT_CAPACITY = 2000
BELIEF_MASS_THRESHOLD = 0.9
KL_SMOOTHING = 1e-6


@dataclass
class SegmentEntry:
    segment: tuple[Turn, ...]
    subgoal: Subgoal
    source_dialog_id: int
    source_goal: Goal
    boundary_state: np.ndarray  # last state of a head, first state of a tail

    def key(self) -> tuple:
        return (self.source_dialog_id, self.subgoal.key())


class SegmentStore:
    """Capacity-bounded head/tail sets with subgoal buckets.

    Entries added since the last stitching pass are tracked so the scan
    only touches new-against-all pairs; an emitted-pair set guarantees no
    dialog is synthesized twice from the same (head, tail).
    """

    def __init__(self, capacity: int = SEGMENT_CAPACITY, audit=None):
        self.capacity = capacity
        self.audit = audit
        self.heads: deque[SegmentEntry] = deque()
        self.tails: deque[SegmentEntry] = deque()
        self.head_keys: set = set()
        self.tail_keys: set = set()
        self.head_buckets: dict[tuple, list[SegmentEntry]] = {}
        self.tail_buckets: dict[tuple, list[SegmentEntry]] = {}
        self.heads_by_dialog: dict[int, list[SegmentEntry]] = {}
        self.new_heads: list[SegmentEntry] = []
        self.new_tails: list[SegmentEntry] = []
        self.emitted_pairs: set = set()
        self.stitch_counter = 0

    def _audit_write(self, kind: str, payload: dict) -> None:
        if self.audit is not None:
            self.audit.write(json.dumps({"type": kind, **payload}) + "\n")

    @staticmethod
    def _subgoal_doc(sg: Subgoal) -> dict:
        return {"constraints": [list(p) for p in sg.constraints],
                "requests": list(sg.requests)}

    def add_head(self, entry: SegmentEntry) -> bool:
        if entry.key() in self.head_keys:
            return False
        if len(self.heads) >= self.capacity:
            old = self.heads.popleft()
            self.head_keys.discard(old.key())
            self.head_buckets[old.subgoal.key()].remove(old)
            self.heads_by_dialog[old.source_dialog_id].remove(old)
        self.heads.append(entry)
        self.head_keys.add(entry.key())
        self.head_buckets.setdefault(entry.subgoal.key(), []).append(entry)
        self.heads_by_dialog.setdefault(entry.source_dialog_id, []).append(entry)
        self.new_heads.append(entry)
        self._audit_write("head", {"dialog": entry.source_dialog_id,
                                   "turns": len(entry.segment),
                                   "subgoal": self._subgoal_doc(entry.subgoal)})
        return True

    def add_tail(self, entry: SegmentEntry) -> bool:
        if entry.key() in self.tail_keys:
            return False
        if len(self.tails) >= self.capacity:
            old = self.tails.popleft()
            self.tail_keys.discard(old.key())
            self.tail_buckets[old.subgoal.key()].remove(old)
        self.tails.append(entry)
        self.tail_keys.add(entry.key())
        self.tail_buckets.setdefault(entry.subgoal.key(), []).append(entry)
        self.new_tails.append(entry)
        self._audit_write("tail", {"dialog": entry.source_dialog_id,
                                   "turns": len(entry.segment),
                                   "subgoal": self._subgoal_doc(entry.subgoal)})
        return True


def subgoal_completed(layout: StateLayout, prefix: list[Turn], g_prime: Subgoal) -> bool:
    """True iff the prefix's final tracker pins every constraint of the
    subgoal on its goal value and has every requested slot filled."""
    if not prefix:
        return False
    return _tracker_completes(layout, prefix[-1].tracker_after, g_prime)


def _tracker_completes(layout: StateLayout, tracker: TrackerState, g_prime: Subgoal) -> bool:
    parent_cmap = g_prime.parent.constraint_map
    for slot, value in g_prime.constraints:
        dist = belief_of(layout, tracker, slot)
        idx = 1 + layout.pools[slot].index(value)
        if dist[idx] < BELIEF_MASS_THRESHOLD:
            return False
    for slot in g_prime.requests:
        filled = tracker.filled_requests.get(slot)
        if filled is None:
            return False
        if filled != FILLED and parent_cmap.get(slot, filled) != filled:
            return False
    return True


def _satisfied_keys(layout: StateLayout, tracker: TrackerState, subgoals) -> set:
    return {sg.key() for sg in subgoals if _tracker_completes(layout, tracker, sg)}


def head_seg_gen(layout: StateLayout, dialog_so_far: Dialog, goal: Goal,
                 store: SegmentStore) -> list[SegmentEntry]:
    """Harvest heads for subgoals newly completed by the latest turn.

    Call once after each appended turn. Tracker progress is monotone, so
    "newly completed" yields the shortest prefix per subgoal.
    """
    turns = dialog_so_far.turns
    if not turns:
        return []
    subgoals = enumerate_subgoals(goal)
    now = _satisfied_keys(layout, turns[-1].tracker_after, subgoals)
    before_tracker = (turns[-2].tracker_after if len(turns) > 1
                      else turns[-1].tracker_snapshot)
    before = _satisfied_keys(layout, before_tracker, subgoals)
    added = []
    fresh = now - before
    if not fresh:
        return added
    prefix = tuple(turns)
    for sg in subgoals:
        if sg.key() in fresh:
            entry = SegmentEntry(segment=prefix, subgoal=sg,
                                 source_dialog_id=dialog_so_far.dialog_id,
                                 source_goal=goal,
                                 boundary_state=turns[-1].s_next)
            if store.add_head(entry):
                added.append(entry)
    return added


def tail_seg_gen(layout: StateLayout, d: Dialog, goal: Goal,
                 store: SegmentStore) -> list[SegmentEntry]:
    """On a successful terminal dialog, pair every harvested head of that
    dialog with its remainder."""
    if d.outcome == "ongoing":
        raise ValueError("tail_seg_gen on an ongoing dialog")
    if d.outcome != "success":
        return []
    added = []
    for head in store.heads_by_dialog.get(d.dialog_id, list()):
        remainder = d.turns[len(head.segment):]
        if not remainder:
            continue
        entry = SegmentEntry(segment=tuple(remainder), subgoal=head.subgoal,
                             source_dialog_id=d.dialog_id, source_goal=goal,
                             boundary_state=remainder[0].s)
        if store.add_tail(entry):
            added.append(entry)
    return added


def kl_divergence(p: np.ndarray, q: np.ndarray, smoothing: float = KL_SMOOTHING) -> float:
    p = np.asarray(p, dtype=float) + smoothing
    q = np.asarray(q, dtype=float) + smoothing
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def kl_similarity(layout: StateLayout, s_last: np.ndarray, s_first: np.ndarray) -> float:
    """KL between the slot-belief regions of two state vectors."""
    if len(s_last) != len(s_first):
        raise ValueError("state vector length mismatch")
    return kl_divergence(s_last[layout.belief_block], s_first[layout.belief_block])


def _stitchable(layout: StateLayout, head: SegmentEntry, tail: SegmentEntry,
                delta: float) -> bool:
    return (head.subgoal.key() == tail.subgoal.key()
            and kl_similarity(layout, head.boundary_state, tail.boundary_state) <= delta)


def _stitch(head: SegmentEntry, tail: SegmentEntry, L: int, dialog_id: int) -> Dialog:
    raw = Dialog(dialog_id=dialog_id, goal=tail.source_goal,
                 turns=list(head.segment) + list(tail.segment),
                 outcome="success", source="hindsight")
    return relabel_rewards(raw, L)


def relabel_rewards(stitched: Dialog, L: int) -> Dialog:
    """Success-shaped rewards: unit cost everywhere, bonus on the last turn."""
    turns = [
        replace(t, r=(2.0 * L - 1.0 if i == len(stitched.turns) - 1 else -1.0),
                done=i == len(stitched.turns) - 1, source="hindsight")
        for i, t in enumerate(stitched.turns)
    ]
    return Dialog(dialog_id=stitched.dialog_id, goal=stitched.goal, turns=turns,
                  outcome="success", source="hindsight")


def hind_man(delta: float, store: SegmentStore, layout: StateLayout,
             L: int) -> list[Dialog]:
    """Stitch every not-yet-emitted compatible (head, tail) pair.

    Scans new heads against all tails and all heads against new tails;
    on a store that has never been scanned this degrades to the full
    Ω×Γ product.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    out = []

    def consider(head: SegmentEntry, tail: SegmentEntry):
        pair = (head.key(), tail.key())
        if pair in store.emitted_pairs:
            return
        if not _stitchable(layout, head, tail, delta):
            return
        store.emitted_pairs.add(pair)
        store.stitch_counter += 1
        stitched = _stitch(head, tail, L, dialog_id=-store.stitch_counter)
        store._audit_write("stitched", {
            "head_dialog": head.source_dialog_id, "tail_dialog": tail.source_dialog_id,
            "turns": len(stitched.turns),
            "subgoal": store._subgoal_doc(head.subgoal)})
        out.append(stitched)

    for head in store.new_heads:
        for tail in store.tail_buckets.get(head.subgoal.key(), ()):
            consider(head, tail)
    for tail in store.new_tails:
        for head in store.head_buckets.get(tail.subgoal.key(), ()):
            consider(head, tail)
    store.new_heads = []
    store.new_tails = []
    return out
