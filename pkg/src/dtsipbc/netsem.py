"""Compositional Petri boxes, the step firing rule and reachability graphs.

Boxes are safe labeled nets with entry/internal/exit place typing.  Operators
splice operand boxes by place multiplication: sequence merges exit with entry
places pairwise, choice merges the entries and the exits of both operands,
iteration fuses the initializer's exits, the body's entries and exits and the
terminator's entries into one looping interface.  Transitions are identified
with enumerated activities, so reachability graphs are directly comparable to
transition systems of expressions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .expr import (
    Act,
    Action,
    Activity,
    Cho,
    Ite,
    Multiset,
    Par,
    Rel,
    Rst,
    Seq,
    StaticExpr,
    Syn,
    is_regular,
    sync_activities,
)
from .opsem import SemanticsError, State, StateSpaceLimit, Transition, TransitionSystem, step_key

__all__ = [
    "Place",
    "NetTransition",
    "DtsiBox",
    "box_of",
    "enabled",
    "fire",
    "fire_prob",
    "build_rg",
    "check_safe_clean",
    "StructureReport",
]

ENTRY, INTERNAL, EXIT = "e", "i", "x"


@dataclass(frozen=True, order=True)
class Place:
    name: str
    label: str  # 'e' | 'i' | 'x'


@dataclass(frozen=True, order=True)
class NetTransition:
    activity: Activity
    pre: Multiset
    post: Multiset


@dataclass(frozen=True)
class DtsiBox:
    """Plain labeled net; transition labels are constant activities."""

    places: Tuple[Place, ...]
    transitions: Tuple[NetTransition, ...]

    def __post_init__(self):
        if not (self.places or self.transitions):
            raise ValueError("a box needs at least one place or transition")
        names = [p.name for p in self.places]
        if len(set(names)) != len(names):
            raise ValueError("duplicate place names")
        for t in self.transitions:
            if not t.pre.items or not t.post.items:
                raise ValueError("every transition needs a nonempty pre- and postset")

    def entries(self) -> Multiset:
        return Multiset.from_iterable(p.name for p in self.places if p.label == ENTRY)

    def exits(self) -> Multiset:
        return Multiset.from_iterable(p.name for p in self.places if p.label == EXIT)

    def initial_marking(self) -> Multiset:
        return self.entries()

    def final_marking(self) -> Multiset:
        return self.exits()


# ---------------------------------------------------------------------------
# Compositional construction
# ---------------------------------------------------------------------------


def _leaf_box(activity: Activity) -> DtsiBox:
    e = Place("e%d" % activity.num, ENTRY)
    x = Place("x%d" % activity.num, EXIT)
    t = NetTransition(activity, Multiset.of(e.name), Multiset.of(x.name))
    return DtsiBox((e, x), (t,))


def _merge(groups: Sequence[Sequence[Place]], label: str) -> Tuple[List[Place], Dict[str, List[str]]]:
    """Multiply place groups: one new place per combination of components.

    Returns the new places and, per component name, the list of product
    places it takes part in (used to reroute arcs).
    """
    products = list(itertools.product(*groups))
    new_places = [Place("(%s)" % "|".join(p.name for p in combo), label) for combo in products]
    takes_part: Dict[str, List[str]] = {}
    for combo, place in zip(products, new_places):
        for p in combo:
            takes_part.setdefault(p.name, []).append(place.name)
    return new_places, takes_part


def _reroute(ms: Multiset, takes_part: Dict[str, List[str]]) -> Multiset:
    counts: Dict[str, int] = {}
    for name, n in ms.items:
        for target in takes_part.get(name, [name]):
            counts[target] = counts.get(target, 0) + n
    return Multiset.from_counts(counts)


def _splice(boxes: Sequence[DtsiBox], groups: Sequence[Sequence[Place]], label: str) -> DtsiBox:
    new_places, takes_part = _merge(groups, label)
    absorbed = {p.name for group in groups for p in group}
    places = [p for box in boxes for p in box.places if p.name not in absorbed] + new_places
    transitions = tuple(
        NetTransition(t.activity, _reroute(t.pre, takes_part), _reroute(t.post, takes_part))
        for box in boxes
        for t in box.transitions
    )
    return DtsiBox(tuple(places), transitions)


def _seq_box(n1: DtsiBox, n2: DtsiBox) -> DtsiBox:
    x1 = [p for p in n1.places if p.label == EXIT]
    e2 = [p for p in n2.places if p.label == ENTRY]
    return _splice((n1, n2), (x1, e2), INTERNAL)


def _cho_box(n1: DtsiBox, n2: DtsiBox) -> DtsiBox:
    e1 = [p for p in n1.places if p.label == ENTRY]
    e2 = [p for p in n2.places if p.label == ENTRY]
    x1 = [p for p in n1.places if p.label == EXIT]
    x2 = [p for p in n2.places if p.label == EXIT]
    entry_places, entry_map = _merge((e1, e2), ENTRY)
    exit_places, exit_map = _merge((x1, x2), EXIT)
    takes_part = {**entry_map, **exit_map}
    absorbed = {p.name for p in e1 + e2 + x1 + x2}
    places = [p for box in (n1, n2) for p in box.places if p.name not in absorbed]
    places += entry_places + exit_places
    transitions = tuple(
        NetTransition(t.activity, _reroute(t.pre, takes_part), _reroute(t.post, takes_part))
        for box in (n1, n2)
        for t in box.transitions
    )
    return DtsiBox(tuple(places), transitions)


def _par_box(n1: DtsiBox, n2: DtsiBox) -> DtsiBox:
    return DtsiBox(n1.places + n2.places, n1.transitions + n2.transitions)


def _ite_box(n1: DtsiBox, n2: DtsiBox, n3: DtsiBox) -> DtsiBox:
    x1 = [p for p in n1.places if p.label == EXIT]
    e2 = [p for p in n2.places if p.label == ENTRY]
    x2 = [p for p in n2.places if p.label == EXIT]
    e3 = [p for p in n3.places if p.label == ENTRY]
    return _splice((n1, n2, n3), (x1, e2, x2, e3), INTERNAL)


def _rel_box(n: DtsiBox, func) -> DtsiBox:
    transitions = tuple(
        NetTransition(func.apply_activity(t.activity), t.pre, t.post) for t in n.transitions
    )
    return DtsiBox(n.places, transitions)


def _rst_box(n: DtsiBox, action: str) -> DtsiBox:
    a, ah = Action(action), Action(action, True)
    transitions = tuple(t for t in n.transitions if a not in t.activity.part and ah not in t.activity.part)
    return DtsiBox(n.places, transitions)


def _syn_box(n: DtsiBox, action: str) -> DtsiBox:
    a, ah = Action(action), Action(action, True)
    pool: Dict[Activity, NetTransition] = {t.activity: t for t in n.transitions}
    frontier = list(pool.values())
    while frontier:
        t = frontier.pop()
        for u in list(pool.values()):
            if t.activity.immediate != u.activity.immediate:
                continue
            if t.activity.content & u.activity.content:
                continue
            for v, w in ((t, u), (u, t)):
                if a in v.activity.part and ah in w.activity.part:
                    merged_act = sync_activities(v.activity, w.activity, a)
                    if merged_act not in pool:
                        merged = NetTransition(merged_act, v.pre + w.pre, v.post + w.post)
                        pool[merged_act] = merged
                        frontier.append(merged)
    return DtsiBox(n.places, tuple(sorted(pool.values())))


def box_of(expr: StaticExpr) -> DtsiBox:
    """Compositional net of a regular term, transitions labeled by activities."""
    if not is_regular(expr):
        raise SemanticsError("expression is not regular")
    return _box_of(expr)


def _box_of(e: StaticExpr) -> DtsiBox:
    if isinstance(e, Act):
        return _leaf_box(e.activity)
    if isinstance(e, Seq):
        return _seq_box(_box_of(e.left), _box_of(e.right))
    if isinstance(e, Cho):
        return _cho_box(_box_of(e.left), _box_of(e.right))
    if isinstance(e, Par):
        return _par_box(_box_of(e.left), _box_of(e.right))
    if isinstance(e, Rel):
        return _rel_box(_box_of(e.child), e.func)
    if isinstance(e, Rst):
        return _rst_box(_box_of(e.child), e.action)
    if isinstance(e, Syn):
        return _syn_box(_box_of(e.child), e.action)
    if isinstance(e, Ite):
        return _ite_box(_box_of(e.init), _box_of(e.body), _box_of(e.term))
    raise TypeError(repr(e))


# ---------------------------------------------------------------------------
# Firing rule
# ---------------------------------------------------------------------------


def enabled(box: DtsiBox, marking: Multiset) -> List[NetTransition]:
    """Transitions with sufficient tokens; immediate ones pre-empt stochastic."""
    fireable = [t for t in box.transitions if t.pre.issubset(marking)]
    if any(t.activity.immediate for t in fireable):
        fireable = [t for t in fireable if t.activity.immediate]
    return sorted(fireable)


def _marking_tangible(box: DtsiBox, marking: Multiset) -> bool:
    ena = enabled(box, marking)
    return not any(t.activity.immediate for t in ena)


def fire(box: DtsiBox, marking: Multiset, group: Iterable[NetTransition]) -> Multiset:
    """Fire a set of transitions at once; no self-concurrency, so sets only."""
    group = list(group)
    ena = set(enabled(box, marking))
    if not all(t in ena for t in group):
        raise SemanticsError("transition set is not enabled")
    pre = Multiset()
    post = Multiset()
    for t in group:
        pre = pre + t.pre
        post = post + t.post
    if not pre.issubset(marking):
        raise SemanticsError("transition set is not enabled as a set")
    return marking - pre + post


def _firing_groups(box: DtsiBox, marking: Multiset) -> List[Tuple[NetTransition, ...]]:
    """Every subset of enabled transitions whose joint preset fits the marking."""
    ena = enabled(box, marking)
    groups: List[Tuple[NetTransition, ...]] = []

    def extend(start: int, chosen: List[NetTransition], used: Multiset) -> None:
        for k in range(start, len(ena)):
            t = ena[k]
            joint = used + t.pre
            if joint.issubset(marking):
                chosen.append(t)
                groups.append(tuple(chosen))
                extend(k + 1, chosen, joint)
                chosen.pop()

    extend(0, [], Multiset())
    if _marking_tangible(box, marking):
        groups.append(())
    return groups


def _group_ready(group: Tuple[NetTransition, ...], ena: List[NetTransition], tangible: bool) -> float:
    if not tangible:
        return sum(t.activity.value for t in group)
    prob = 1.0
    chosen = set(group)
    for t in group:
        prob *= t.activity.value
    for u in ena:
        if u not in chosen:
            prob *= 1.0 - u.activity.value
    return prob


def fire_prob(box: DtsiBox, marking: Multiset, group: Iterable[NetTransition]) -> float:
    """Normalized probability that exactly this transition set fires."""
    group = tuple(sorted(group))
    groups = _firing_groups(box, marking)
    if group not in groups:
        raise SemanticsError("transition set is not fireable here")
    ena = enabled(box, marking)
    tangible = _marking_tangible(box, marking)
    total = sum(_group_ready(g, ena, tangible) for g in groups)
    return _group_ready(group, ena, tangible) / total


# ---------------------------------------------------------------------------
# Reachability graph
# ---------------------------------------------------------------------------


def marking_key(marking: Multiset) -> str:
    return str(marking)


def build_rg(box: DtsiBox, initial: Optional[Multiset] = None, max_states: int = 100_000) -> TransitionSystem:
    """Reachability graph under the step firing rule, shaped like a transition
    system (steps are the activity sets of the fired transitions)."""
    start = box.initial_marking() if initial is None else initial
    index: Dict[Multiset, int] = {}
    markings: List[Multiset] = []
    states: List[State] = []
    step_rows: List[List[Tuple[Tuple[NetTransition, ...], int]]] = []

    def intern(m: Multiset) -> int:
        idx = index.get(m)
        if idx is None:
            idx = len(markings)
            if idx >= max_states:
                raise StateSpaceLimit(max_states)
            index[m] = idx
            markings.append(m)
            states.append(State(marking_key(m), (), True))
            step_rows.append([])
        return idx

    intern(start)
    cursor = 0
    while cursor < len(markings):
        i = cursor
        cursor += 1
        m = markings[i]
        tangible = _marking_tangible(box, m)
        states[i] = State(states[i].key, (), tangible)
        groups = _firing_groups(box, m)
        groups.sort(key=lambda g: step_key(frozenset(t.activity for t in g)))
        for g in groups:
            target = intern(fire(box, m, g) if g else m)
            step_rows[i].append((g, target))

    transitions: List[Transition] = []
    for i, rows in enumerate(step_rows):
        m = markings[i]
        ena = enabled(box, m)
        tangible = states[i].tangible
        total = sum(_group_ready(g, ena, tangible) for g, _ in rows)
        for g, j in rows:
            prob = _group_ready(g, ena, tangible) / total
            step = frozenset(t.activity for t in g)
            transitions.append(Transition(i, step, prob, j))

    rg = TransitionSystem(states, transitions, 0, None)
    rg.markings = markings  # type: ignore[attr-defined]
    return rg


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


@dataclass
class StructureReport:
    safe: bool
    clean: bool
    marking_count: int
    unsafe_witness: Optional[str] = None
    unclean_witness: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.safe and self.clean


def check_safe_clean(box: DtsiBox, max_states: int = 100_000) -> StructureReport:
    """Verify one-boundedness and entry/exit cleanness over reachable markings."""
    rg = build_rg(box, max_states=max_states)
    markings: List[Multiset] = rg.markings  # type: ignore[attr-defined]
    entries = box.entries()
    exits = box.exits()
    report = StructureReport(True, True, len(markings))
    for m in markings:
        if any(n > 1 for _, n in m.items):
            report.safe = False
            report.unsafe_witness = marking_key(m)
        if entries.issubset(m) and m != entries:
            report.clean = False
            report.unclean_witness = marking_key(m)
        if exits.issubset(m) and m != exits:
            report.clean = False
            report.unclean_witness = marking_key(m)
    return report
