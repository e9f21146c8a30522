"""Slot ontology, user goals, goal templates, and the subgoal lattice.

A goal is a pair (constraints, requests): the constraints pin slot values
the user insists on, the requests name slots the user wants answered.
Subgoals are the nonempty sub-pairs of a goal; the hindsight machinery
indexes dialog segments by them, so their enumeration order must be
deterministic.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

CONSTRAINT_KIND = "constraint-type"
INFORMABLE_KIND = "system-informable"
SLOT_KINDS = (CONSTRAINT_KIND, INFORMABLE_KIND)

# Subgoal enumeration is exponential in |C|+|R|; keep goals small.
MAX_GOAL_SLOTS = 8


class ConfigError(ValueError):
    """Raised for invalid ontologies, templates, or run configuration."""


@dataclass(frozen=True)
class SlotId:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in SLOT_KINDS:
            raise ConfigError(f"unknown slot kind {self.kind!r} for slot {self.name!r}")


class Ontology:
    """Immutable slot catalogue; shared freely across runs."""

    def __init__(self, slots: Sequence[SlotId], value_pools: Mapping[str, Sequence[str]]):
        names = [s.name for s in slots]
        if len(set(names)) != len(names):
            raise ConfigError("slot names must be unique within an ontology")
        self.slots = tuple(sorted(slots, key=lambda s: s.name))
        self.by_name = {s.name: s for s in self.slots}
        self.value_pools = {}
        for slot in self.slots:
            pool = tuple(str(v) for v in value_pools.get(slot.name, ()))
            if not pool:
                raise ConfigError(f"slot {slot.name!r} has an empty value pool")
            if len(set(pool)) != len(pool):
                raise ConfigError(f"slot {slot.name!r} has duplicate values")
            self.value_pools[slot.name] = pool
        self.constraint_slots = tuple(s.name for s in self.slots if s.kind == CONSTRAINT_KIND)
        self.informable_slots = tuple(s.name for s in self.slots if s.kind == INFORMABLE_KIND)

    def __len__(self):
        return len(self.slots)

    def has_slot(self, name: str) -> bool:
        return name in self.by_name

    def check_value(self, slot: str, value: str) -> bool:
        return value in self.value_pools.get(slot, ())


@dataclass(frozen=True)
class Goal:
    """User goal: a constraint map and a request set over ontology slots."""

    constraints: tuple[tuple[str, str], ...]  # sorted (slot, value) pairs
    requests: tuple[str, ...]                 # sorted slot names

    @staticmethod
    def make(constraints: Mapping[str, str], requests: Sequence[str]) -> "Goal":
        return Goal(
            constraints=tuple(sorted((str(k), str(v)) for k, v in constraints.items())),
            requests=tuple(sorted(str(r) for r in requests)),
        )

    @property
    def constraint_map(self) -> dict[str, str]:
        return dict(self.constraints)

    def size(self) -> int:
        return len(self.constraints) + len(self.requests)

    def validate(self, ontology: Ontology) -> None:
        if not self.constraints and not self.requests:
            raise ConfigError("goal must have at least one constraint or request")
        cslots = {s for s, _ in self.constraints}
        if cslots & set(self.requests):
            raise ConfigError("constraint and request slots must be disjoint")
        for slot, value in self.constraints:
            if not ontology.has_slot(slot):
                raise ConfigError(f"constraint slot {slot!r} not in ontology")
            if ontology.by_name[slot].kind != CONSTRAINT_KIND:
                raise ConfigError(f"constraint slot {slot!r} is not constraint-type")
            if not ontology.check_value(slot, value):
                raise ConfigError(f"value {value!r} not in pool of slot {slot!r}")
        for slot in self.requests:
            if not ontology.has_slot(slot):
                raise ConfigError(f"request slot {slot!r} not in ontology")
        if self.size() > MAX_GOAL_SLOTS:
            raise ConfigError(
                f"goal spans {self.size()} slots; capped at {MAX_GOAL_SLOTS} "
                "to keep subgoal enumeration tractable"
            )


@dataclass(frozen=True)
class Subgoal:
    """Nonempty sub-pair (C' subset of C, R' subset of R) of a parent goal."""

    constraints: tuple[tuple[str, str], ...]
    requests: tuple[str, ...]
    parent: Goal

    @property
    def constraint_map(self) -> dict[str, str]:
        return dict(self.constraints)

    def key(self) -> tuple:
        """Hashable identity used for segment matching and dedup."""
        return (self.constraints, self.requests)

    def size(self) -> int:
        return len(self.constraints) + len(self.requests)


@dataclass(frozen=True)
class GoalTemplate:
    weight: float
    constraint_pools: tuple[tuple[str, tuple[str, ...]], ...]  # sorted (slot, pool)
    requests: tuple[str, ...]

    @staticmethod
    def make(weight, constraint_pools: Mapping[str, Sequence[str]], requests) -> "GoalTemplate":
        pools = []
        for slot, pool in constraint_pools.items():
            if isinstance(pool, str):
                pool = [pool]
            pools.append((str(slot), tuple(str(v) for v in pool)))
        return GoalTemplate(
            weight=float(weight),
            constraint_pools=tuple(sorted(pools)),
            requests=tuple(sorted(str(r) for r in requests)),
        )


@dataclass
class GoalTemplateSet:
    templates: list[GoalTemplate] = field(default_factory=list)

    def validate(self, ontology: Ontology) -> None:
        if not self.templates:
            raise ConfigError("template set is empty")
        for t in self.templates:
            if t.weight <= 0:
                raise ConfigError("template weights must be positive")
            # every value in every pool must be legal, so every sample is a valid goal
            for slot, pool in t.constraint_pools:
                for v in pool:
                    Goal.make({slot: v}, []).validate(ontology)
            probe = Goal.make({s: p[0] for s, p in t.constraint_pools}, t.requests)
            probe.validate(ontology)

    def __len__(self):
        return len(self.templates)


def sample_goal(templates: GoalTemplateSet, rng: np.random.Generator) -> Goal:
    """Draw a goal: weighted template choice, then uniform value per constraint slot."""
    if not templates.templates:
        raise ConfigError("cannot sample from an empty template set")
    weights = np.array([t.weight for t in templates.templates], dtype=float)
    probs = weights / weights.sum()
    idx = int(rng.choice(len(probs), p=probs))
    t = templates.templates[idx]
    constraints = {}
    for slot, pool in t.constraint_pools:
        constraints[slot] = pool[int(rng.integers(len(pool)))]
    return Goal.make(constraints, t.requests)


def enumerate_subgoals(g: Goal) -> list[Subgoal]:
    """All nonempty subgoals of g, in a fixed binary-counter order.

    Items are ordered constraints-then-requests, each slot-name sorted;
    subset i selects item j iff bit j of i is set. Yields exactly
    2^(|C|+|R|) - 1 subgoals.
    """
    if g.size() > MAX_GOAL_SLOTS:
        raise ConfigError(f"goal spans {g.size()} slots; cap is {MAX_GOAL_SLOTS}")
    items = [("c", pair) for pair in g.constraints] + [("r", name) for name in g.requests]
    out = []
    for mask in range(1, 1 << len(items)):
        constraints = []
        requests = []
        for j, (tag, item) in enumerate(items):
            if mask >> j & 1:
                (constraints if tag == "c" else requests).append(item)
        out.append(Subgoal(tuple(constraints), tuple(requests), parent=g))
    return out


def is_subgoal(g_prime, g: Goal) -> bool:
    """True iff g_prime is a nonempty sub-pair of g with matching constraint values."""
    constraints = dict(g_prime.constraints)
    requests = set(g_prime.requests)
    if not constraints and not requests:
        return False
    parent_constraints = g.constraint_map
    for slot, value in constraints.items():
        if parent_constraints.get(slot) != value:
            return False
    return requests <= set(g.requests)


def load_ontology_dict(doc: dict) -> tuple[Ontology, GoalTemplateSet]:
    """Build (Ontology, GoalTemplateSet) from the JSON document layout.

    Expected keys: `slots` (array of {name, kind, values}) and `templates`
    (array of {weight, constraints, requests}); template constraint values
    may be a single string or an array (the value pool).
    """
    try:
        slot_entries = doc["slots"]
        template_entries = doc["templates"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"ontology file missing required key: {exc}") from exc
    slots = []
    pools = {}
    for entry in slot_entries:
        slots.append(SlotId(name=str(entry["name"]), kind=str(entry["kind"])))
        pools[str(entry["name"])] = entry.get("values", ())
    ontology = Ontology(slots, pools)
    templates = GoalTemplateSet(
        [
            GoalTemplate.make(
                entry.get("weight", 1.0),
                entry.get("constraints", {}),
                entry.get("requests", ()),
            )
            for entry in template_entries
        ]
    )
    templates.validate(ontology)
    return ontology, templates


def load_ontology(path) -> tuple[Ontology, GoalTemplateSet]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return load_ontology_dict(doc)


def builtin_ontology(name: str) -> tuple[Ontology, GoalTemplateSet]:
    """Load a packaged ontology: `desk` (8 slots, fast) or `full` (29 slots)."""
    if name not in ("desk", "full"):
        raise ConfigError(f"unknown builtin ontology {name!r}; use 'desk' or 'full'")
    text = resources.files("dialoglab.data").joinpath(f"{name}.json").read_text("utf-8")
    return load_ontology_dict(json.loads(text))


def brute_force_subgoal_count(g: Goal) -> int:
    """Independent subset count used by tests: enumerate via itertools, filter empty."""
    items = list(g.constraints) + list(g.requests)
    count = 0
    for r in range(len(items) + 1):
        for combo in itertools.combinations(range(len(items)), r):
            if combo:
                count += 1
    return count
