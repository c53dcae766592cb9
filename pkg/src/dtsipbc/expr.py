"""Core algebra: actions, multisets, activities and process expression trees.

Values of every class here are immutable and hashable, so they can be shared
freely between threads and used as dictionary keys (state keys, step labels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Tuple, Union

__all__ = [
    "Action",
    "Multiset",
    "Numbering",
    "numbering_content",
    "numbering_str",
    "Activity",
    "Relabeling",
    "StaticExpr",
    "Act",
    "Seq",
    "Cho",
    "Par",
    "Rel",
    "Rst",
    "Syn",
    "Ite",
    "DynamicExpr",
    "Over",
    "Under",
    "DSeq",
    "DCho",
    "DPar",
    "DRel",
    "DRst",
    "DSyn",
    "DIte",
    "STOP_ACTION",
    "stop_expr",
    "is_stop",
    "sync_parts",
    "sync_activities",
    "apply_relabel",
    "is_regular",
    "is_iteration_body",
    "underlying",
    "renumber",
    "activities_of",
    "is_dynamic",
]


# ---------------------------------------------------------------------------
# Actions and multisets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Action:
    """Elementary action or its conjugate (the hat form)."""

    name: str
    conjugated: bool = False

    def conjugate(self) -> "Action":
        return Action(self.name, not self.conjugated)

    def __str__(self) -> str:
        return self.name + ("^" if self.conjugated else "")


@dataclass(frozen=True, order=True)
class Multiset:
    """Finite multiset with orderable elements, kept as sorted (item, count) pairs.

    Sum and difference follow the bag laws (M+M')(x) = M(x)+M'(x) and
    (M-M')(x) = max(0, M(x)-M'(x)); difference saturates at zero.
    """

    items: Tuple[Tuple[Any, int], ...] = ()

    @staticmethod
    def of(*elements: Any) -> "Multiset":
        return Multiset.from_iterable(elements)

    @staticmethod
    def from_iterable(elements: Iterable[Any]) -> "Multiset":
        counts: dict = {}
        for x in elements:
            counts[x] = counts.get(x, 0) + 1
        return Multiset(tuple(sorted(counts.items())))

    @staticmethod
    def from_counts(counts: Mapping[Any, int]) -> "Multiset":
        return Multiset(tuple(sorted((x, n) for x, n in counts.items() if n > 0)))

    def count(self, x: Any) -> int:
        for y, n in self.items:
            if y == x:
                return n
        return 0

    def __contains__(self, x: Any) -> bool:
        return self.count(x) > 0

    def __iter__(self) -> Iterator[Any]:
        """Iterate over distinct elements."""
        return (x for x, _ in self.items)

    def elements(self) -> Iterator[Any]:
        """Iterate over elements with multiplicity."""
        for x, n in self.items:
            for _ in range(n):
                yield x

    @property
    def cardinality(self) -> int:
        return sum(n for _, n in self.items)

    def __bool__(self) -> bool:
        return bool(self.items)

    def __add__(self, other: "Multiset") -> "Multiset":
        counts = dict(self.items)
        for x, n in other.items:
            counts[x] = counts.get(x, 0) + n
        return Multiset.from_counts(counts)

    def __sub__(self, other: "Multiset") -> "Multiset":
        counts = dict(self.items)
        for x, n in other.items:
            counts[x] = max(0, counts.get(x, 0) - n)
        return Multiset.from_counts(counts)

    def issubset(self, other: "Multiset") -> bool:
        return all(other.count(x) >= n for x, n in self.items)

    def keys(self) -> Tuple[Any, ...]:
        return tuple(x for x, _ in self.items)

    def __str__(self) -> str:
        parts = []
        for x, n in self.items:
            parts.extend([str(x)] * n)
        return "{%s}" % ",".join(parts)


# A multiaction is a Multiset of Action values; the empty multiaction is the
# invisible internal move.
Multiaction = Multiset


def alphabet(part: Multiset) -> frozenset:
    return frozenset(part.keys())


# ---------------------------------------------------------------------------
# Numberings
# ---------------------------------------------------------------------------

# A numbering is a leaf (int) or an ordered pair of numberings, encoding the
# binary synchronization tree.  Identity of activities uses only the content.
Numbering = Union[int, Tuple["Numbering", "Numbering"]]


def numbering_content(num: Numbering) -> frozenset:
    if isinstance(num, int):
        return frozenset((num,))
    left, right = num
    return numbering_content(left) | numbering_content(right)


def numbering_str(num: Numbering) -> str:
    if isinstance(num, int):
        return str(num)
    left, right = num
    return "(%s)(%s)" % (numbering_str(left), numbering_str(right))


# ---------------------------------------------------------------------------
# Activities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Activity:
    """Stochastic or immediate multiaction occurrence.

    ``leaves`` maps each leaf number of the numbering to the base probability
    or weight it contributes; the effective value is the product (stochastic)
    or the sum (immediate) over the sorted leaves, which makes activities
    produced by synchronizing the same set in different orders compare equal.
    The numbering tree itself is kept for display only and is excluded from
    equality and ordering.
    """

    part: Multiset
    immediate: bool
    leaves: Tuple[Tuple[int, float], ...]
    num: Numbering = field(compare=False)

    @staticmethod
    def make(part: Multiset, immediate: bool, value: float, leaf: int) -> "Activity":
        if immediate:
            if not value > 0:
                raise ValueError("immediate weight must be positive, got %r" % value)
        elif not 0 < value < 1:
            raise ValueError("probability must lie strictly in (0;1), got %r" % value)
        return Activity(part, immediate, ((leaf, value),), leaf)

    @property
    def value(self) -> float:
        vals = [v for _, v in self.leaves]
        return math.fsum(vals) if self.immediate else math.prod(vals)

    @property
    def content(self) -> frozenset:
        return frozenset(i for i, _ in self.leaves)

    def __str__(self) -> str:
        if self.immediate:
            return "(%s,#%s)" % (self.part, format_value(self.value))
        return "(%s,%s)" % (self.part, format_value(self.value))

    def tagged(self) -> str:
        return "%s:%s" % (self, numbering_str(self.num))


def format_value(v: float) -> str:
    return repr(v)


def sync_parts(alpha: Multiset, beta: Multiset, a: Action) -> Multiset:
    """Merge two multiactions over an action/conjugate pair, removing one of each."""
    ah = a.conjugate()
    if not ((a in alpha and ah in beta) or (ah in alpha and a in beta)):
        raise ValueError("multiactions %s and %s are not synchronizable on %s" % (alpha, beta, a))
    return alpha + beta - Multiset.of(a, ah)


def sync_activities(u: Activity, v: Activity, a: Action) -> Activity:
    """Fuse two activities over ``a``: probabilities multiply, weights add."""
    if u.immediate != v.immediate:
        raise ValueError("cannot synchronize a stochastic activity with an immediate one")
    if u.content & v.content:
        raise ValueError("self-synchronization is not allowed")
    part = sync_parts(u.part, v.part, a)
    leaves = tuple(sorted(u.leaves + v.leaves))
    return Activity(part, u.immediate, leaves, (u.num, v.num))


# ---------------------------------------------------------------------------
# Relabelings
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Relabeling:
    """Bijection on actions that preserves conjugation, given on base names."""

    pairs: Tuple[Tuple[str, str], ...]

    def __post_init__(self) -> None:
        mapping = dict(self.pairs)
        if len(mapping) != len(self.pairs):
            raise ValueError("relabeling maps a name twice")
        if sorted(mapping) != sorted(mapping.values()):
            raise ValueError("relabeling is not a bijection: domain and range differ")

    @staticmethod
    def swap(*swaps: Tuple[str, str]) -> "Relabeling":
        pairs = []
        for x, y in swaps:
            pairs.append((x, y))
            if x != y:
                pairs.append((y, x))
        return Relabeling(tuple(sorted(set(pairs))))

    def apply_action(self, act: Action) -> Action:
        mapping = dict(self.pairs)
        return Action(mapping.get(act.name, act.name), act.conjugated)

    def apply_part(self, part: Multiset) -> Multiset:
        return Multiset.from_iterable(self.apply_action(x) for x in part.elements())

    def apply_activity(self, u: Activity) -> Activity:
        return Activity(self.apply_part(u.part), u.immediate, u.leaves, u.num)

    def __str__(self) -> str:
        done = set()
        chunks = []
        for x, y in self.pairs:
            if x in done:
                continue
            if dict(self.pairs).get(y) == x and x != y:
                chunks.append("%s<->%s" % tuple(sorted((x, y))))
                done.update((x, y))
            else:
                chunks.append("%s->%s" % (x, y))
                done.add(x)
        return "[f: %s]" % ", ".join(sorted(chunks))


def apply_relabel(f: Relabeling, step: Iterable[Activity]) -> frozenset:
    """Relabel every activity of a step elementwise; kinds and numberings stay."""
    return frozenset(f.apply_activity(u) for u in step)


# ---------------------------------------------------------------------------
# Static expressions
# ---------------------------------------------------------------------------


class StaticExpr:
    """Base class for process structure trees."""

    __slots__ = ()


@dataclass(frozen=True, order=True)
class Act(StaticExpr):
    activity: Activity


@dataclass(frozen=True, order=True)
class Seq(StaticExpr):
    left: StaticExpr
    right: StaticExpr


@dataclass(frozen=True, order=True)
class Cho(StaticExpr):
    left: StaticExpr
    right: StaticExpr


@dataclass(frozen=True, order=True)
class Par(StaticExpr):
    left: StaticExpr
    right: StaticExpr


@dataclass(frozen=True, order=True)
class Rel(StaticExpr):
    child: StaticExpr
    func: Relabeling


@dataclass(frozen=True, order=True)
class Rst(StaticExpr):
    child: StaticExpr
    action: str


@dataclass(frozen=True, order=True)
class Syn(StaticExpr):
    child: StaticExpr
    action: str


@dataclass(frozen=True, order=True)
class Ite(StaticExpr):
    init: StaticExpr
    body: StaticExpr
    term: StaticExpr


# The non-terminating process is an abbreviation for a restricted activity
# over a reserved action that no surface-syntax model can mention.
STOP_ACTION = "%stop"


def stop_expr(leaf: int = 0) -> StaticExpr:
    act = Activity.make(Multiset.of(Action(STOP_ACTION)), False, 0.5, leaf)
    return Rst(Act(act), STOP_ACTION)


def is_stop(e: StaticExpr) -> bool:
    return (
        isinstance(e, Rst)
        and e.action == STOP_ACTION
        and isinstance(e.child, Act)
        and e.child.activity.part == Multiset.of(Action(STOP_ACTION))
    )


def is_regular(e: StaticExpr) -> bool:
    """Check the regular grammar: no parallel composition at the top level of
    any iteration body."""
    if isinstance(e, Act):
        return True
    if isinstance(e, (Seq, Cho, Par)):
        return is_regular(e.left) and is_regular(e.right)
    if isinstance(e, (Rel, Rst, Syn)):
        return is_regular(e.child)
    if isinstance(e, Ite):
        return is_regular(e.init) and is_iteration_body(e.body) and is_regular(e.term)
    raise TypeError("not a static expression: %r" % (e,))


def is_iteration_body(e: StaticExpr) -> bool:
    if isinstance(e, Act):
        return True
    if isinstance(e, Seq):
        return is_iteration_body(e.left) and is_regular(e.right)
    if isinstance(e, Cho):
        return is_iteration_body(e.left) and is_iteration_body(e.right)
    if isinstance(e, Par):
        return False
    if isinstance(e, (Rel, Rst, Syn)):
        return is_iteration_body(e.child)
    if isinstance(e, Ite):
        return is_iteration_body(e.init) and is_iteration_body(e.body) and is_regular(e.term)
    raise TypeError("not a static expression: %r" % (e,))


def activities_of(e: StaticExpr) -> Tuple[Activity, ...]:
    """All activity occurrences in source order."""
    if isinstance(e, Act):
        return (e.activity,)
    if isinstance(e, (Seq, Cho, Par)):
        return activities_of(e.left) + activities_of(e.right)
    if isinstance(e, (Rel, Rst, Syn)):
        return activities_of(e.child)
    if isinstance(e, Ite):
        return activities_of(e.init) + activities_of(e.body) + activities_of(e.term)
    raise TypeError("not a static expression: %r" % (e,))


def renumber(e: StaticExpr, start: int = 1) -> StaticExpr:
    """Assign fresh leaf numbers 1..n to activity occurrences, left to right."""
    counter = [start - 1]

    def walk(node: StaticExpr) -> StaticExpr:
        if isinstance(node, Act):
            counter[0] += 1
            u = node.activity
            base = u.leaves[0][1] if len(u.leaves) == 1 else u.value
            return Act(Activity(u.part, u.immediate, ((counter[0], base),), counter[0]))
        if isinstance(node, Seq):
            return Seq(walk(node.left), walk(node.right))
        if isinstance(node, Cho):
            return Cho(walk(node.left), walk(node.right))
        if isinstance(node, Par):
            return Par(walk(node.left), walk(node.right))
        if isinstance(node, Rel):
            return Rel(walk(node.child), node.func)
        if isinstance(node, Rst):
            return Rst(walk(node.child), node.action)
        if isinstance(node, Syn):
            return Syn(walk(node.child), node.action)
        if isinstance(node, Ite):
            return Ite(walk(node.init), walk(node.body), walk(node.term))
        raise TypeError("not a static expression: %r" % (node,))

    return walk(e)


# ---------------------------------------------------------------------------
# Dynamic expressions
# ---------------------------------------------------------------------------


class DynamicExpr:
    """Static skeleton annotated with bars marking the active components."""

    __slots__ = ()


@dataclass(frozen=True, order=True)
class Over(DynamicExpr):
    expr: StaticExpr


@dataclass(frozen=True, order=True)
class Under(DynamicExpr):
    expr: StaticExpr


@dataclass(frozen=True, order=True)
class DSeq(DynamicExpr):
    # exactly one side is dynamic
    left: Union[StaticExpr, DynamicExpr]
    right: Union[StaticExpr, DynamicExpr]


@dataclass(frozen=True, order=True)
class DCho(DynamicExpr):
    left: Union[StaticExpr, DynamicExpr]
    right: Union[StaticExpr, DynamicExpr]


@dataclass(frozen=True, order=True)
class DPar(DynamicExpr):
    left: DynamicExpr
    right: DynamicExpr


@dataclass(frozen=True, order=True)
class DRel(DynamicExpr):
    child: DynamicExpr
    func: Relabeling


@dataclass(frozen=True, order=True)
class DRst(DynamicExpr):
    child: DynamicExpr
    action: str


@dataclass(frozen=True, order=True)
class DSyn(DynamicExpr):
    child: DynamicExpr
    action: str


@dataclass(frozen=True, order=True)
class DIte(DynamicExpr):
    # exactly one of the three arguments is dynamic
    init: Union[StaticExpr, DynamicExpr]
    body: Union[StaticExpr, DynamicExpr]
    term: Union[StaticExpr, DynamicExpr]


def is_dynamic(x: object) -> bool:
    return isinstance(x, DynamicExpr)


def underlying(g: Union[StaticExpr, DynamicExpr]) -> StaticExpr:
    """Strip every bar, recovering the static skeleton."""
    if isinstance(g, StaticExpr):
        return g
    if isinstance(g, (Over, Under)):
        return g.expr
    if isinstance(g, DSeq):
        return Seq(underlying(g.left), underlying(g.right))
    if isinstance(g, DCho):
        return Cho(underlying(g.left), underlying(g.right))
    if isinstance(g, DPar):
        return Par(underlying(g.left), underlying(g.right))
    if isinstance(g, DRel):
        return Rel(underlying(g.child), g.func)
    if isinstance(g, DRst):
        return Rst(underlying(g.child), g.action)
    if isinstance(g, DSyn):
        return Syn(underlying(g.child), g.action)
    if isinstance(g, DIte):
        return Ite(underlying(g.init), underlying(g.body), underlying(g.term))
    raise TypeError("not an expression: %r" % (g,))
