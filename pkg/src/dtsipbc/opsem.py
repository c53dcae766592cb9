"""Step operational semantics: bar rewriting, step derivation, transition systems.

States are structural-equivalence classes of barred expressions: the closure
of a term under the bar-moving rewrite rules applied forwards and backwards.
A step is a set of activities executed in one clock tick (stochastic) or
instantaneously (immediate).  Immediate steps pre-empt stochastic ones, which
is enforced twice: locally, through the guards of the derivation rules at
choice, parallel and iteration positions (evaluated against whole equivalence
classes, so that structurally equivalent terms agree), and globally, when a
class containing a derivable immediate step refuses the empty tick.

Probabilities follow the discrete-time reading: every stochastic activity
executable in a tangible state tosses its own coin, the results are
conditioned on forming an executable set, and weights of immediate activities
are normalized directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from .expr import (
    Act,
    Action,
    Activity,
    Cho,
    DCho,
    DIte,
    DPar,
    DRel,
    DRst,
    DSeq,
    DSyn,
    DynamicExpr,
    Ite,
    Over,
    Par,
    Rel,
    Rst,
    Seq,
    StaticExpr,
    Syn,
    Under,
    is_regular,
    sync_activities,
    underlying,
)
from .parser import serialize

__all__ = [
    "SemanticsError",
    "StateSpaceLimit",
    "Step",
    "step_key",
    "step_label",
    "State",
    "Transition",
    "TransitionSystem",
    "Engine",
    "inaction_closure",
    "build_ts",
    "ts_isomorphic",
    "leaf_values_of",
    "potential_steps",
    "current_steps",
    "member_tangible",
]

Step = FrozenSet[Activity]

EMPTY_STEP: Step = frozenset()


class SemanticsError(Exception):
    """An invariant of the step semantics failed; indicates a malformed model."""


class StateSpaceLimit(Exception):
    def __init__(self, limit: int):
        super().__init__("state-space limit of %d exceeded" % limit)
        self.limit = limit


def step_key(step: Step) -> Tuple[Activity, ...]:
    return tuple(sorted(step))


def step_label(step: Step):
    """Multiset of multiaction parts of a step (what an observer sees)."""
    from .expr import Multiset

    return Multiset.from_iterable(u.part for u in step)


def is_immediate_step(step: Step) -> bool:
    return bool(step) and next(iter(step)).immediate


# ---------------------------------------------------------------------------
# Bar rewriting
# ---------------------------------------------------------------------------


def _forward_root(d: DynamicExpr) -> List[DynamicExpr]:
    out: List[DynamicExpr] = []
    if isinstance(d, Over):
        e = d.expr
        if isinstance(e, Seq):
            out.append(DSeq(Over(e.left), e.right))
        elif isinstance(e, Cho):
            out.append(DCho(Over(e.left), e.right))
            out.append(DCho(e.left, Over(e.right)))
        elif isinstance(e, Par):
            out.append(DPar(Over(e.left), Over(e.right)))
        elif isinstance(e, Rel):
            out.append(DRel(Over(e.child), e.func))
        elif isinstance(e, Rst):
            out.append(DRst(Over(e.child), e.action))
        elif isinstance(e, Syn):
            out.append(DSyn(Over(e.child), e.action))
        elif isinstance(e, Ite):
            out.append(DIte(Over(e.init), e.body, e.term))
    elif isinstance(d, DSeq):
        if isinstance(d.left, Under):
            out.append(DSeq(d.left.expr, Over(d.right)))
        if isinstance(d.right, Under):
            out.append(Under(Seq(d.left, d.right.expr)))
    elif isinstance(d, DCho):
        if isinstance(d.left, Under):
            out.append(Under(Cho(d.left.expr, d.right)))
        if isinstance(d.right, Under):
            out.append(Under(Cho(d.left, d.right.expr)))
    elif isinstance(d, DPar):
        if isinstance(d.left, Under) and isinstance(d.right, Under):
            out.append(Under(Par(d.left.expr, d.right.expr)))
    elif isinstance(d, DRel):
        if isinstance(d.child, Under):
            out.append(Under(Rel(d.child.expr, d.func)))
    elif isinstance(d, DRst):
        if isinstance(d.child, Under):
            out.append(Under(Rst(d.child.expr, d.action)))
    elif isinstance(d, DSyn):
        if isinstance(d.child, Under):
            out.append(Under(Syn(d.child.expr, d.action)))
    elif isinstance(d, DIte):
        if isinstance(d.init, Under):
            out.append(DIte(d.init.expr, Over(d.body), d.term))
        if isinstance(d.body, Under):
            out.append(DIte(d.init, Over(d.body.expr), d.term))
            out.append(DIte(d.init, d.body.expr, Over(d.term)))
        if isinstance(d.term, Under):
            out.append(Under(Ite(d.init, d.body, d.term.expr)))
    return out


def _backward_root(d: DynamicExpr) -> List[DynamicExpr]:
    out: List[DynamicExpr] = []
    if isinstance(d, DSeq):
        if isinstance(d.left, Over):
            out.append(Over(Seq(d.left.expr, d.right)))
        if isinstance(d.right, Over):
            out.append(DSeq(Under(d.left), d.right.expr))
    elif isinstance(d, Under):
        e = d.expr
        if isinstance(e, Seq):
            out.append(DSeq(e.left, Under(e.right)))
        elif isinstance(e, Cho):
            out.append(DCho(Under(e.left), e.right))
            out.append(DCho(e.left, Under(e.right)))
        elif isinstance(e, Par):
            out.append(DPar(Under(e.left), Under(e.right)))
        elif isinstance(e, Rel):
            out.append(DRel(Under(e.child), e.func))
        elif isinstance(e, Rst):
            out.append(DRst(Under(e.child), e.action))
        elif isinstance(e, Syn):
            out.append(DSyn(Under(e.child), e.action))
        elif isinstance(e, Ite):
            out.append(DIte(e.init, e.body, Under(e.term)))
    elif isinstance(d, DCho):
        if isinstance(d.left, Over):
            out.append(Over(Cho(d.left.expr, d.right)))
        if isinstance(d.right, Over):
            out.append(Over(Cho(d.left, d.right.expr)))
    elif isinstance(d, DPar):
        if isinstance(d.left, Over) and isinstance(d.right, Over):
            out.append(Over(Par(d.left.expr, d.right.expr)))
    elif isinstance(d, DRel):
        if isinstance(d.child, Over):
            out.append(Over(Rel(d.child.expr, d.func)))
    elif isinstance(d, DRst):
        if isinstance(d.child, Over):
            out.append(Over(Rst(d.child.expr, d.action)))
    elif isinstance(d, DSyn):
        if isinstance(d.child, Over):
            out.append(Over(Syn(d.child.expr, d.action)))
    elif isinstance(d, DIte):
        if isinstance(d.init, Over):
            out.append(Over(Ite(d.init.expr, d.body, d.term)))
        if isinstance(d.body, Over):
            out.append(DIte(Under(d.init), d.body.expr, d.term))
            out.append(DIte(d.init, Under(d.body.expr), d.term))
        if isinstance(d.term, Over):
            out.append(DIte(d.init, Under(d.body), d.term.expr))
    return out


def _rewrites(d: DynamicExpr, root_rule) -> List[DynamicExpr]:
    """Apply a root rule at every dynamic position of ``d``."""
    out = list(root_rule(d))
    if isinstance(d, (Over, Under)):
        return out
    if isinstance(d, DSeq):
        if isinstance(d.left, DynamicExpr):
            out.extend(DSeq(g, d.right) for g in _rewrites(d.left, root_rule))
        if isinstance(d.right, DynamicExpr):
            out.extend(DSeq(d.left, g) for g in _rewrites(d.right, root_rule))
    elif isinstance(d, DCho):
        if isinstance(d.left, DynamicExpr):
            out.extend(DCho(g, d.right) for g in _rewrites(d.left, root_rule))
        if isinstance(d.right, DynamicExpr):
            out.extend(DCho(d.left, g) for g in _rewrites(d.right, root_rule))
    elif isinstance(d, DPar):
        out.extend(DPar(g, d.right) for g in _rewrites(d.left, root_rule))
        out.extend(DPar(d.left, g) for g in _rewrites(d.right, root_rule))
    elif isinstance(d, DRel):
        out.extend(DRel(g, d.func) for g in _rewrites(d.child, root_rule))
    elif isinstance(d, DRst):
        out.extend(DRst(g, d.action) for g in _rewrites(d.child, root_rule))
    elif isinstance(d, DSyn):
        out.extend(DSyn(g, d.action) for g in _rewrites(d.child, root_rule))
    elif isinstance(d, DIte):
        if isinstance(d.init, DynamicExpr):
            out.extend(DIte(g, d.body, d.term) for g in _rewrites(d.init, root_rule))
        if isinstance(d.body, DynamicExpr):
            out.extend(DIte(d.init, g, d.term) for g in _rewrites(d.body, root_rule))
        if isinstance(d.term, DynamicExpr):
            out.extend(DIte(d.init, d.body, g) for g in _rewrites(d.term, root_rule))
    return out


# ---------------------------------------------------------------------------
# States, transitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class State:
    key: str
    members: Tuple[DynamicExpr, ...]
    tangible: bool

    @property
    def kind(self) -> str:
        return "tangible" if self.tangible else "vanishing"


@dataclass(frozen=True)
class Transition:
    source: int
    step: Step
    prob: float
    target: int


@dataclass
class TransitionSystem:
    """Reachable step-labeled probabilistic transition system of a term."""

    states: List[State]
    transitions: List[Transition]
    initial: int = 0
    expr: Optional[StaticExpr] = None
    _out: Optional[List[List[Transition]]] = field(default=None, repr=False)

    def outgoing(self, i: int) -> List[Transition]:
        if self._out is None:
            out: List[List[Transition]] = [[] for _ in self.states]
            for t in self.transitions:
                out[t.source].append(t)
            self._out = out
        return self._out[i]

    def exec_steps(self, i: int) -> List[Step]:
        return [t.step for t in self.outgoing(i)]

    def tangible_states(self) -> List[int]:
        return [i for i, s in enumerate(self.states) if s.tangible]

    def vanishing_states(self) -> List[int]:
        return [i for i, s in enumerate(self.states) if not s.tangible]

    # -- probability functions over one state ------------------------------

    def ready_prob(self, step: Step, i: int) -> float:
        """Readiness probability (stochastic) or cumulative weight (immediate)."""
        steps = set(self.exec_steps(i))
        if step not in steps:
            raise SemanticsError("step %r is not executable in state %d" % (sorted(map(str, step)), i + 1))
        return self._ready(step, steps, self.states[i].tangible)

    @staticmethod
    def _ready(step: Step, steps: Iterable[Step], tangible: bool) -> float:
        if not tangible:
            return sum(u.value for u in step)
        singles = {next(iter(s)) for s in steps if len(s) == 1}
        prob = 1.0
        for u in step:
            prob *= u.value
        for v in singles:
            if v not in step:
                prob *= 1.0 - v.value
        return prob

    def step_prob(self, step: Step, i: int) -> float:
        """Normalized probability to execute ``step`` in state ``i``."""
        steps = self.exec_steps(i)
        if step not in steps:
            raise SemanticsError("step %r is not executable in state %d" % (sorted(map(str, step)), i + 1))
        tang = self.states[i].tangible
        total = sum(self._ready(s, steps, tang) for s in steps)
        return self._ready(step, steps, tang) / total

    def move_prob(self, i: int, j: int) -> float:
        return sum(t.prob for t in self.outgoing(i) if t.target == j)

    def pm_matrix(self):
        import numpy as np

        n = len(self.states)
        pm = np.zeros((n, n))
        for t in self.transitions:
            pm[t.source, t.target] += t.prob
        return pm

    # -- parameter sweeps ---------------------------------------------------

    def reweight(self, leaf_values: Dict[int, float], remap_members: bool = False) -> "TransitionSystem":
        """Same structure with new base probabilities and weights per leaf.

        The step structure of the semantics does not depend on the numeric
        values, so parameter sweeps rebuild only activity values and step
        probabilities.  Pass ``remap_members`` to also rewrite the member
        expressions and state keys (slower; only exports need it).
        """

        def remap(u: Activity) -> Activity:
            leaves = tuple((i, leaf_values.get(i, v)) for i, v in u.leaves)
            return Activity(u.part, u.immediate, leaves, u.num)

        if remap_members:
            states = [
                State(
                    serialize(_remap_leaves(s.members[0], leaf_values)),
                    tuple(_remap_leaves(m, leaf_values) for m in s.members),
                    s.tangible,
                )
                for s in self.states
            ]
        else:
            states = list(self.states)
        steps_by_state: List[List[Tuple[Step, int]]] = [[] for _ in self.states]
        for t in self.transitions:
            steps_by_state[t.source].append((frozenset(remap(u) for u in t.step), t.target))
        transitions = []
        for i, pairs in enumerate(steps_by_state):
            tang = self.states[i].tangible
            steps = [s for s, _ in pairs]
            total = sum(self._ready(s, steps, tang) for s in steps)
            for s, target in pairs:
                transitions.append(Transition(i, s, self._ready(s, steps, tang) / total, target))
        expr = _remap_leaves(self.expr, leaf_values) if self.expr is not None else None
        return TransitionSystem(states, transitions, self.initial, expr)


def _remap_leaves(node, leaf_values: Dict[int, float]):
    """Rebuild an expression with new base values at the given leaves."""
    if isinstance(node, Act):
        u = node.activity
        leaves = tuple((i, leaf_values.get(i, v)) for i, v in u.leaves)
        return Act(Activity(u.part, u.immediate, leaves, u.num))
    if isinstance(node, Seq):
        return Seq(_remap_leaves(node.left, leaf_values), _remap_leaves(node.right, leaf_values))
    if isinstance(node, Cho):
        return Cho(_remap_leaves(node.left, leaf_values), _remap_leaves(node.right, leaf_values))
    if isinstance(node, Par):
        return Par(_remap_leaves(node.left, leaf_values), _remap_leaves(node.right, leaf_values))
    if isinstance(node, Rel):
        return Rel(_remap_leaves(node.child, leaf_values), node.func)
    if isinstance(node, Rst):
        return Rst(_remap_leaves(node.child, leaf_values), node.action)
    if isinstance(node, Syn):
        return Syn(_remap_leaves(node.child, leaf_values), node.action)
    if isinstance(node, Ite):
        return Ite(
            _remap_leaves(node.init, leaf_values),
            _remap_leaves(node.body, leaf_values),
            _remap_leaves(node.term, leaf_values),
        )
    if isinstance(node, Over):
        return Over(_remap_leaves(node.expr, leaf_values))
    if isinstance(node, Under):
        return Under(_remap_leaves(node.expr, leaf_values))
    if isinstance(node, DSeq):
        return DSeq(_remap_leaves(node.left, leaf_values), _remap_leaves(node.right, leaf_values))
    if isinstance(node, DCho):
        return DCho(_remap_leaves(node.left, leaf_values), _remap_leaves(node.right, leaf_values))
    if isinstance(node, DPar):
        return DPar(_remap_leaves(node.left, leaf_values), _remap_leaves(node.right, leaf_values))
    if isinstance(node, DRel):
        return DRel(_remap_leaves(node.child, leaf_values), node.func)
    if isinstance(node, DRst):
        return DRst(_remap_leaves(node.child, leaf_values), node.action)
    if isinstance(node, DSyn):
        return DSyn(_remap_leaves(node.child, leaf_values), node.action)
    if isinstance(node, DIte):
        return DIte(
            _remap_leaves(node.init, leaf_values),
            _remap_leaves(node.body, leaf_values),
            _remap_leaves(node.term, leaf_values),
        )
    raise TypeError(repr(node))


def leaf_values_of(expr: StaticExpr) -> Dict[int, float]:
    """Base value carried by every activity leaf of a numbered expression."""
    from .expr import activities_of

    out: Dict[int, float] = {}
    for u in activities_of(expr):
        for i, v in u.leaves:
            out[i] = v
    return out


# ---------------------------------------------------------------------------
# The derivation engine
# ---------------------------------------------------------------------------


class Engine:
    """Caches bar closures and step derivations.

    The derivation rules are applied without their stochastic guards; the
    pre-emption of stochastic steps by immediate ones is enforced once per
    equivalence class, after restriction has filtered the derived steps.
    Evaluating the priority on the class (instead of on subterms) is what
    makes it agree with the net semantics, where restricted immediate
    transitions do not exist and therefore cannot pre-empt anything.
    """

    def __init__(self, closure_limit: int = 10**6):
        self.closure_limit = closure_limit
        self._closures: Dict[DynamicExpr, FrozenSet[DynamicExpr]] = {}
        self._operative: Dict[DynamicExpr, Tuple[DynamicExpr, ...]] = {}
        self._derived: Dict[DynamicExpr, Tuple[Tuple[Step, DynamicExpr], ...]] = {}

    # -- structural equivalence --------------------------------------------

    def closure(self, g: DynamicExpr) -> FrozenSet[DynamicExpr]:
        cached = self._closures.get(g)
        if cached is not None:
            return cached
        seen = {g}
        frontier = [g]
        while frontier:
            d = frontier.pop()
            for nxt in _rewrites(d, _forward_root) + _rewrites(d, _backward_root):
                if nxt not in seen:
                    seen.add(nxt)
                    if len(seen) > self.closure_limit:
                        raise StateSpaceLimit(self.closure_limit)
                    frontier.append(nxt)
        result = frozenset(seen)
        for member in result:
            self._closures[member] = result
        return result

    def operatives(self, g: DynamicExpr) -> Tuple[DynamicExpr, ...]:
        cached = self._operative.get(g)
        if cached is not None:
            return cached
        ops = [d for d in self.closure(g) if not _rewrites(d, _forward_root)]
        ops.sort(key=serialize)
        result = tuple(ops)
        for member in self.closure(g):
            self._operative[member] = result
        return result

    def is_initial(self, g: DynamicExpr) -> bool:
        return Over(underlying(g)) in self.closure(g)

    def is_final(self, g: DynamicExpr) -> bool:
        return Under(underlying(g)) in self.closure(g)

    # -- step derivation ------------------------------------------------------

    def derive(self, h: DynamicExpr) -> Tuple[Tuple[Step, DynamicExpr], ...]:
        """All non-empty steps derivable from one operative expression."""
        cached = self._derived.get(h)
        if cached is not None:
            return cached
        result = tuple(sorted(self._derive(h).items(), key=lambda kv: step_key(kv[0])))
        self._derived[h] = result
        return result

    def class_steps(self, members: Iterable[DynamicExpr]) -> Dict[Step, DynamicExpr]:
        """Executable steps of a whole equivalence class, priority applied."""
        merged: Dict[Step, DynamicExpr] = {}
        for h in members:
            for step, tgt in self.derive(h):
                merged.setdefault(step, tgt)
        if any(is_immediate_step(s) for s in merged):
            merged = {s: t for s, t in merged.items() if is_immediate_step(s)}
        return merged

    def _derive(self, h: DynamicExpr) -> Dict[Step, DynamicExpr]:
        out: Dict[Step, DynamicExpr] = {}

        def put(step: Step, target: DynamicExpr) -> None:
            old = out.get(step)
            if old is not None and old != target:
                raise SemanticsError(
                    "step %s from %s reaches two targets" % ([str(u) for u in step], serialize(h))
                )
            out[step] = target

        if isinstance(h, Over):
            if isinstance(h.expr, Act):
                u = h.expr.activity
                put(frozenset((u,)), Under(h.expr))
            return out
        if isinstance(h, Under):
            return out
        if isinstance(h, DSeq):
            dyn_left = isinstance(h.left, DynamicExpr)
            child = h.left if dyn_left else h.right
            for step, tgt in self.derive(child):
                put(step, DSeq(tgt, h.right) if dyn_left else DSeq(h.left, tgt))
            return out
        if isinstance(h, DCho):
            dyn_left = isinstance(h.left, DynamicExpr)
            child = h.left if dyn_left else h.right
            for step, tgt in self.derive(child):
                put(step, DCho(tgt, h.right) if dyn_left else DCho(h.left, tgt))
            return out
        if isinstance(h, DPar):
            left_steps = self.derive(h.left)
            right_steps = self.derive(h.right)
            for step, tgt in left_steps:
                put(step, DPar(tgt, h.right))
            for step, tgt in right_steps:
                put(step, DPar(h.left, tgt))
            for (s1, t1), (s2, t2) in itertools.product(left_steps, right_steps):
                if is_immediate_step(s1) == is_immediate_step(s2):
                    put(s1 | s2, DPar(t1, t2))
            return out
        if isinstance(h, DRel):
            for step, tgt in self.derive(h.child):
                put(frozenset(h.func.apply_activity(u) for u in step), DRel(tgt, h.func))
            return out
        if isinstance(h, DRst):
            a, ah = Action(h.action), Action(h.action, True)
            for step, tgt in self.derive(h.child):
                if all(a not in u.part and ah not in u.part for u in step):
                    put(step, DRst(tgt, h.action))
            return out
        if isinstance(h, DSyn):
            action = Action(h.action)
            for step, tgt in self.derive(h.child):
                for merged in _saturate_step(step, action):
                    put(merged, DSyn(tgt, h.action))
            return out
        if isinstance(h, DIte):
            if isinstance(h.init, DynamicExpr):
                for step, tgt in self.derive(h.init):
                    put(step, DIte(tgt, h.body, h.term))
            elif isinstance(h.body, DynamicExpr):
                for step, tgt in self.derive(h.body):
                    put(step, DIte(h.init, tgt, h.term))
            else:
                for step, tgt in self.derive(h.term):
                    put(step, DIte(h.init, h.body, tgt))
            return out
        raise TypeError(repr(h))


def _saturate_step(step: Step, a: Action) -> List[Step]:
    """Close one derived step under pairwise synchronization on ``a``."""
    ah = a.conjugate()
    seen = {step}
    frontier = [step]
    while frontier:
        current = frontier.pop()
        items = sorted(current)
        for u, v in itertools.permutations(items, 2):
            if u.immediate != v.immediate or (u.content & v.content):
                continue
            if a in u.part and ah in v.part:
                w = sync_activities(u, v, a)
                merged = (current - {u, v}) | {w}
                if merged not in seen:
                    seen.add(merged)
                    frontier.append(merged)
    return sorted(seen, key=step_key)


# ---------------------------------------------------------------------------
# Potentially and currently executable step sets of one operative term
# ---------------------------------------------------------------------------


def potential_steps(h: DynamicExpr) -> FrozenSet[Step]:
    """Non-empty activity sets a single operative term could execute, ignoring
    the pre-emption by immediates (downward closed by construction)."""
    if isinstance(h, Over):
        if isinstance(h.expr, Act):
            return frozenset((frozenset((h.expr.activity,)),))
        raise SemanticsError("not an operative term: %s" % serialize(h))
    if isinstance(h, Under):
        return frozenset()
    if isinstance(h, (DSeq, DCho)):
        child = h.left if isinstance(h.left, DynamicExpr) else h.right
        return potential_steps(child)
    if isinstance(h, DPar):
        left = potential_steps(h.left)
        right = potential_steps(h.right)
        combined = set(left) | set(right)
        for s1 in left:
            for s2 in right:
                combined.add(s1 | s2)
        return frozenset(combined)
    if isinstance(h, DRel):
        return frozenset(
            frozenset(h.func.apply_activity(u) for u in s) for s in potential_steps(h.child)
        )
    if isinstance(h, DRst):
        a, ah = Action(h.action), Action(h.action, True)
        return frozenset(
            s
            for s in potential_steps(h.child)
            if all(a not in u.part and ah not in u.part for u in s)
        )
    if isinstance(h, DSyn):
        action = Action(h.action)
        out = set()
        for s in potential_steps(h.child):
            out.update(_saturate_step(s, action))
        return frozenset(out)
    if isinstance(h, DIte):
        child = next(x for x in (h.init, h.body, h.term) if isinstance(x, DynamicExpr))
        return potential_steps(child)
    raise TypeError(repr(h))


def current_steps(h: DynamicExpr) -> FrozenSet[Step]:
    """Steps a single operative term can execute right now: all potential ones
    when they are uniformly stochastic or uniformly immediate, otherwise only
    the immediate-only ones (immediates pre-empt)."""
    can = potential_steps(h)
    stoch_only = all(not u.immediate for s in can for u in s)
    imm_only = all(u.immediate for s in can for u in s)
    if stoch_only or imm_only:
        return can
    return frozenset(s for s in can if all(u.immediate for u in s))


def member_tangible(h: DynamicExpr) -> bool:
    """No immediate step among the currently executable ones of this term."""
    return all(not u.immediate for s in current_steps(h) for u in s)


# ---------------------------------------------------------------------------
# Transition-system construction
# ---------------------------------------------------------------------------


def inaction_closure(g: DynamicExpr, engine: Optional[Engine] = None) -> State:
    """The structural-equivalence class of ``g`` as a semantic state."""
    engine = engine or Engine()
    members = engine.operatives(g)
    if not members:
        raise SemanticsError("no operative member for %s" % serialize(g))
    steps = engine.class_steps(members)
    tangible = not any(is_immediate_step(s) for s in steps)
    return State(serialize(members[0]), members, tangible)


def build_ts(expr: StaticExpr, max_states: int = 100_000, engine: Optional[Engine] = None) -> TransitionSystem:
    """Breadth-first construction of the transition system of ``~expr``."""
    if not is_regular(expr):
        raise SemanticsError("expression is not regular: %s" % serialize(expr))
    engine = engine or Engine()

    index: Dict[Tuple[DynamicExpr, ...], int] = {}
    states: List[State] = []
    step_data: List[List[Tuple[Step, int]]] = []

    def intern(g: DynamicExpr) -> int:
        members = engine.operatives(g)
        idx = index.get(members)
        if idx is None:
            idx = len(states)
            if idx >= max_states:
                raise StateSpaceLimit(max_states)
            index[members] = idx
            states.append(State(serialize(members[0]), members, True))
            step_data.append([])
        return idx

    intern(Over(expr))
    cursor = 0
    while cursor < len(states):
        i = cursor
        cursor += 1
        members = states[i].members
        # collect every derivation of each executable step, then intern the
        # targets in sorted step order so that state numbering is stable
        variants: Dict[Step, List[DynamicExpr]] = {}
        for h in members:
            for step, tgt in engine.derive(h):
                variants.setdefault(step, []).append(tgt)
        if any(is_immediate_step(s) for s in variants):
            variants = {s: t for s, t in variants.items() if is_immediate_step(s)}
            tangible = False
        else:
            tangible = True
        pairs: List[Tuple[Step, int]] = []
        for step in sorted(variants, key=step_key):
            targets = {intern(t) for t in variants[step]}
            if len(targets) != 1:
                raise SemanticsError("step from state %d reaches two distinct classes" % (i + 1))
            pairs.append((step, targets.pop()))
        if tangible:
            pairs.insert(0, (EMPTY_STEP, i))
        states[i] = State(states[i].key, members, tangible)
        step_data[i] = pairs

    transitions: List[Transition] = []
    for i, pairs in enumerate(step_data):
        tangible = states[i].tangible
        steps = [s for s, _ in pairs]
        if tangible:
            singles = {next(iter(s)) for s in steps if len(s) == 1}
            in_steps = {u for s in steps for u in s}
            if singles != in_steps:
                raise SemanticsError("subset closure violated in state %d" % (i + 1))
        total = sum(TransitionSystem._ready(s, steps, tangible) for s in steps)
        for s, j in pairs:
            prob = TransitionSystem._ready(s, steps, tangible) / total
            transitions.append(Transition(i, s, prob, j))

    return TransitionSystem(states, transitions, 0, expr)


# ---------------------------------------------------------------------------
# Isomorphism of labeled probabilistic transition systems
# ---------------------------------------------------------------------------


def ts_isomorphic(a, b, tol: float = 1e-9) -> Optional[Dict[int, int]]:
    """Bijection preserving the initial state, step labels and probabilities.

    Works for any pair of transition-system shaped objects (expression
    semantics or net reachability graphs) whose steps are activity sets.
    Returns the state mapping, or None when the systems differ.
    """
    if len(a.states) != len(b.states) or len(a.transitions) != len(b.transitions):
        return None

    def groups(ts, i):
        by_label: Dict[Tuple, List[Tuple[float, int]]] = {}
        for t in ts.outgoing(i):
            by_label.setdefault(step_key(t.step), []).append((t.prob, t.target))
        return by_label

    def kind(ts, i) -> bool:
        return ts.states[i].tangible

    def solve(obligations, mapping, reverse):
        while obligations:
            i, j = obligations.pop()
            if i in mapping:
                if mapping[i] != j:
                    return None
                continue
            if j in reverse:
                return None
            if kind(a, i) != kind(b, j):
                return None
            ga, gb = groups(a, i), groups(b, j)
            if set(ga) != set(gb):
                return None
            mapping = dict(mapping)
            reverse = dict(reverse)
            mapping[i] = j
            reverse[j] = i
            local: List[Tuple[List[Tuple[float, int]], List[Tuple[float, int]]]] = []
            for label, la in ga.items():
                lb = gb[label]
                if len(la) != len(lb):
                    return None
                if len(la) == 1:
                    if abs(la[0][0] - lb[0][0]) > tol:
                        return None
                    obligations = obligations + [(la[0][1], lb[0][1])]
                else:
                    local.append((la, lb))
            if local:
                return _branch(local, obligations, mapping, reverse, solve, tol)
        return mapping

    def _branch(local, obligations, mapping, reverse, cont, tol):
        la, lb = local[0]
        rest = local[1:]
        for perm in itertools.permutations(range(len(lb))):
            if all(abs(la[k][0] - lb[p][0]) <= tol for k, p in enumerate(perm)):
                new_obl = obligations + [(la[k][1], lb[p][1]) for k, p in enumerate(perm)]
                if rest:
                    result = _branch(rest, new_obl, mapping, reverse, cont, tol)
                else:
                    result = cont(new_obl, mapping, reverse)
                if result is not None:
                    return result
        return None

    return solve([(a.initial, b.initial)], {}, {})
