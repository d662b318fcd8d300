from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskref.kripke import (
    KripkeStructure,
    StateLimitExceeded,
    Trace,
    TransitionSystem,
    check_AG,
    check_EF,
    find_path,
    reachability_closure,
    resolve_max_states,
    search,
)


def chain(*edges, domain=None):
    return TransitionSystem.from_edges(edges, domain)


def test_closure_two_state_chain():
    K = reachability_closure({"a"}, chain(("a", "b")))
    assert K.states == {"a", "b"}
    assert K.init == {"a"}
    assert K.depth == 1


def test_closure_without_transitions():
    K = reachability_closure({"a"}, chain())
    assert K.states == {"a"}
    assert K.depth == 0


def test_closure_rejects_empty_init():
    with pytest.raises(ValueError):
        reachability_closure(set(), chain())


def test_closure_bound():
    ts = TransitionSystem.from_edges((i, i + 1) for i in range(100))
    with pytest.raises(StateLimitExceeded) as err:
        reachability_closure({0}, ts, max_states=10)
    assert err.value.limit == 10
    assert "max_states=10" in str(err.value)


def test_bound_resolution(monkeypatch):
    monkeypatch.delenv("RISKREF_MAX_STATES", raising=False)
    assert resolve_max_states(None) == 10**7
    monkeypatch.setenv("RISKREF_MAX_STATES", "42")
    assert resolve_max_states(None) == 42
    assert resolve_max_states(7) == 7


def test_kripke_init_must_be_subset():
    with pytest.raises(ValueError):
        KripkeStructure(frozenset({"a"}), frozenset({"b"}), chain())


def test_trace_needs_a_state():
    with pytest.raises(ValueError):
        Trace(())


def test_ef_holds_with_witness():
    K = reachability_closure({"a"}, chain(("a", "b")))
    res = check_EF(K, {"b"})
    assert res.holds
    assert res.witnesses["a"].steps == ("a", "b")


def test_ef_fails_without_path():
    K = reachability_closure({"a"}, chain())
    res = check_EF(K, {"b"})
    assert not res.holds
    assert res.failing_init == "a"


def test_ef_requires_every_initial_state():
    K = reachability_closure({"a", "c"}, chain(("a", "b")))
    res = check_EF(K, {"b"})
    assert not res.holds and res.failing_init == "c"


def test_ag_self_loop():
    K = reachability_closure({"a"}, chain(("a", "a")))
    assert check_AG(K, {"a"}).holds


def test_ag_counterexample_is_shortest():
    K = reachability_closure({0}, chain((0, 1), (1, 2), (0, 3), (3, 2)))
    res = check_AG(K, lambda s: s != 2)
    assert not res.holds
    assert res.counterexample.steps == (0, 1, 2)


def test_find_path_zero_length():
    K = reachability_closure({"a"}, chain(("a", "b")))
    assert find_path(K, "a", {"a"}).steps == ("a",)
    assert find_path(K, "a", {"b"}).steps == ("a", "b")
    with pytest.raises(ValueError):
        find_path(K, "z", {"a"})


def test_tie_break_prefers_least_state():
    # Two shortest paths 0->1->9 and 0->2->9; the smaller intermediate wins.
    K = reachability_closure({0}, chain((0, 2), (0, 1), (2, 9), (1, 9)))
    assert find_path(K, 0, {9}).steps == (0, 1, 9)


def test_search_on_the_fly_matches_closure():
    ts = chain((0, 1), (1, 2), (2, 3))
    res = search({0}, ts, {2})
    assert res.found and res.trace.steps == (0, 1, 2)
    miss = search({0}, ts, {7})
    assert not miss.found and miss.explored == 4


def test_parallel_expansion_is_identical(monkeypatch):
    import riskref.kripke as kripke

    monkeypatch.setattr(kripke, "PARALLEL_THRESHOLD", 1)  # force the process pool
    edges = [(i, (i * 7 + 3) % 997) for i in range(997)] + [(i, (i + 1) % 997) for i in range(997)]
    ts = chain(*edges)
    one = reachability_closure({0}, ts, workers=1)
    four = reachability_closure({0}, ts, workers=4)
    assert one.states == four.states and one.depth == four.depth
    a = search({0}, ts, {500}, workers=1)
    b = search({0}, ts, {500}, workers=4)
    assert a.trace == b.trace


graphs = st.integers(1, 6).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))),
        st.sets(st.integers(0, n - 1), min_size=1),
    )
)


def naive_closure(init, edges):
    states = set(init)
    while True:
        more = {b for a, b in edges if a in states} - states
        if not more:
            return states
        states |= more


@settings(max_examples=150, deadline=None)
@given(graphs)
def test_closure_is_least_fixpoint(g):
    n, edges, init = g
    K = reachability_closure(init, chain(*edges))
    assert K.states == naive_closure(init, edges)
    assert K.is_closed()
    assert not K.unreachable_states()


@settings(max_examples=150, deadline=None)
@given(graphs, st.sets(st.integers(0, 5)))
def test_ef_ag_duality_and_witnesses(g, target):
    n, edges, init = g
    K = reachability_closure(init, chain(*edges))
    ag = check_AG(K, lambda s: s not in target)
    hit_any = bool(K.states & target)
    assert ag.holds == (not hit_any)
    if not ag.holds:
        assert ag.counterexample.is_valid_for(K) and ag.counterexample.last in target
    ef = check_EF(K, target)
    expected = all(naive_closure({i}, edges) & target for i in init)
    assert ef.holds == expected
    for i, t in ef.witnesses.items():
        assert t.first == i and t.is_valid_for(K) and t.last in target
