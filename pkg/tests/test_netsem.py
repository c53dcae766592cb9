"""Net construction, the step firing rule, reachability, structural checks."""

import pytest

from dtsipbc.expr import Action, Multiset
from dtsipbc.netsem import (
    DtsiBox,
    NetTransition,
    Place,
    box_of,
    build_rg,
    check_safe_clean,
    enabled,
    fire,
    fire_prob,
)
from dtsipbc.opsem import build_ts, ts_isomorphic
from dtsipbc.parser import parse_static

from conftest import instantiate, make_rng, random_regular_text


class TestConstruction:
    def test_single_activity_box(self):
        box = box_of(parse_static("({a},0.7)"))
        assert [p.label for p in box.places] == ["e", "x"]
        (t,) = box.transitions
        assert str(t.activity.part) == "{a}" and t.activity.value == 0.7
        assert t.pre == box.entries() and t.post == box.exits()

    def test_sequence_merges_exit_with_entry(self):
        box = box_of(parse_static("({a},0.5);({b},0.5)"))
        labels = sorted(p.label for p in box.places)
        assert labels == ["e", "i", "x"]

    def test_choice_merges_both_interfaces(self):
        box = box_of(parse_static("({a},0.5)[]({b},0.5)"))
        assert sorted(p.label for p in box.places) == ["e", "x"]
        assert len(box.transitions) == 2

    def test_parallel_is_disjoint(self):
        box = box_of(parse_static("({a},0.5)||({b},0.5)"))
        assert sorted(p.label for p in box.places) == ["e", "e", "x", "x"]

    def test_restriction_removes_transitions(self):
        box = box_of(parse_static("(({a},0.5)[]({b},0.5)) rs a"))
        assert len(box.transitions) == 1
        assert str(box.transitions[0].activity.part) == "{b}"

    def test_synchronization_adds_silent_transition(self):
        box = box_of(parse_static("(({a},0.5);({a^},0.5)) sy a"))
        parts = sorted(str(t.activity.part) for t in box.transitions)
        assert parts == sorted(["{}", "{a^}", "{a}"])
        silent = next(t for t in box.transitions if not t.activity.part)
        assert silent.activity.value == pytest.approx(0.25)
        assert silent.pre.cardinality == 2

    def test_iteration_single_interface(self):
        box = box_of(parse_static("[({a},0.5) * ({b},0.5) * ({c},0.5)]"))
        internals = [p for p in box.places if p.label == "i"]
        assert len(internals) == 1
        body = next(t for t in box.transitions if str(t.activity.part) == "{b}")
        assert body.pre == body.post  # body loops on the interface

    def test_every_transition_connected(self):
        rng = make_rng(5)
        for _ in range(30):
            e = parse_static(random_regular_text(rng))
            box = box_of(e)
            names = {p.name for p in box.places}
            for t in box.transitions:
                assert t.pre.items and t.post.items
                assert set(t.pre.keys()) <= names and set(t.post.keys()) <= names


class TestFiringRule:
    def setup_method(self):
        self.box = box_of(parse_static("({a},0.3)[]({a},0.5)"))
        self.m0 = self.box.initial_marking()

    def test_priority_of_immediates(self):
        box = box_of(parse_static("({a},#1)||({b},0.5)"))
        ena = enabled(box, box.initial_marking())
        assert [t.activity.immediate for t in ena] == [True]

    def test_enabled_empty_marking(self):
        assert enabled(self.box, Multiset()) == []

    def test_fire_moves_tokens(self):
        (t1, t2) = sorted(self.box.transitions)
        m1 = fire(self.box, self.m0, [t1])
        assert m1 == self.box.final_marking()

    def test_fire_probabilities_match_expression(self):
        ts = build_ts(parse_static("({a},0.3)[]({a},0.5)"))
        for t in sorted(self.box.transitions):
            got = fire_prob(self.box, self.m0, [t])
            want = next(
                tr.prob
                for tr in ts.outgoing(0)
                if tr.step and next(iter(tr.step)).value == t.activity.value
            )
            assert got == pytest.approx(want, abs=1e-12)
        assert fire_prob(self.box, self.m0, []) == pytest.approx(
            (1 - 0.3) * (1 - 0.5) / (1 - 0.15), abs=1e-12
        )

    def test_vanishing_marking_weights(self):
        box = box_of(parse_static("({a},#1)[]({a},#2)"))
        (t1, t2) = sorted(box.transitions, key=lambda t: t.activity.value)
        m0 = box.initial_marking()
        assert fire_prob(box, m0, [t1]) == pytest.approx(1 / 3)
        assert fire_prob(box, m0, [t2]) == pytest.approx(2 / 3)

    def test_conflicting_set_rejected(self):
        (t1, t2) = self.box.transitions
        with pytest.raises(Exception):
            fire(self.box, self.m0, [t1, t2])

    def test_empty_step_keeps_marking(self):
        assert fire(self.box, self.m0, []) == self.m0


class TestReachability:
    def test_running_example_rg(self):
        e = instantiate("ts_example")
        rg = build_rg(box_of(e))
        assert len(rg.states) == 5
        assert sum(s.tangible for s in rg.states) == 4
        assert ts_isomorphic(build_ts(e), rg) is not None

    def test_shared_memory_rg(self):
        e = instantiate("shared_memory")
        rg = build_rg(box_of(e))
        assert len(rg.states) == 9
        assert ts_isomorphic(build_ts(e), rg) is not None

    def test_rg_rows_are_distributions(self):
        rg = build_rg(box_of(instantiate("shared_memory")))
        for i in range(len(rg.states)):
            assert sum(t.prob for t in rg.outgoing(i)) == pytest.approx(1.0, abs=1e-12)

    def test_synchronized_sequential_pair(self):
        # the silent synchronized transition requires two tokens at once and
        # never fires, so the graph matches the unsynchronized one
        e1 = parse_static("({a},0.5);({a^},0.5)")
        e2 = parse_static("(({a},0.5);({a^},0.5)) sy a")
        assert ts_isomorphic(build_rg(box_of(e1)), build_rg(box_of(e2))) is not None


class TestStructure:
    @pytest.mark.parametrize("name", [
        "ts_example", "choice_stoch", "choice_imm", "sync_pair",
        "qts_f", "shared_memory", "shared_memory_abstract",
    ])
    def test_bundled_boxes_safe_and_clean(self, name):
        report = check_safe_clean(box_of(instantiate(name)))
        assert report.safe and report.clean

    def test_unsafe_witness_detected(self):
        # hand-made 2-bounded net: one transition feeding a place twice
        p = Place("p", "e")
        q = Place("q", "x")
        from dtsipbc.expr import Activity

        t = NetTransition(
            Activity.make(Multiset.of(Action("a")), False, 0.5, 1),
            Multiset.of("p"),
            Multiset.from_counts({"q": 2}),
        )
        box = DtsiBox((p, q), (t,))
        report = check_safe_clean(box)
        assert not report.safe and report.unsafe_witness
