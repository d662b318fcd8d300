from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskref.corona import refmap
from riskref.kripke import TransitionSystem, reachability_closure
from riskref.refinement import (
    IDENTITY,
    AbstractionMap,
    RefinementVerdict,
    check_init_ref,
    check_prop_pres,
    check_refinement,
    check_rr_cycle,
    check_strong_mt,
    check_strong_mt_prime,
    compose_maps,
    one_step_witness,
)

REFMAP = AbstractionMap(refmap, "refmap")


def closure(init, edges, domain):
    return reachability_closure(init, TransitionSystem.from_edges(edges, domain))


def table_map(table):
    return AbstractionMap(table.__getitem__, "table")


def test_verdict_witness_consistency():
    with pytest.raises(ValueError):
        RefinementVerdict(True, clause="init")
    with pytest.raises(ValueError):
        RefinementVerdict(False)


def test_reflexive_on_chain():
    K = closure({0}, [(0, 1), (1, 2)], range(3))
    assert check_refinement(K, K, IDENTITY).holds
    assert check_strong_mt(K, K, IDENTITY)


def test_init_clause_failure():
    K = closure({0}, [(0, 1)], range(2))
    Kc = closure({1}, [], range(2))
    v = check_refinement(K, Kc, IDENTITY)
    assert not v.holds and v.clause == "init" and v.concrete_state == 1


def test_reachability_clause_failure():
    K = closure({0}, [(0, 1)], range(3))
    Kc = closure({0}, [(0, 2)], range(3))
    v = check_refinement(K, Kc, IDENTITY)
    assert (v.holds, v.clause, v.concrete_state, v.abstract_state) == (False, "reachability", 2, 2)


def test_init_ref_examples():
    K = closure({0}, [], range(1))
    assert check_init_ref(K, K, IDENTITY)
    Kc = closure({5}, [], range(6))
    assert not check_init_ref(K, Kc, IDENTITY)


def test_strong_mt_unreachable_pair():
    # 2 -> 3 is unreachable in the concrete system and unrelated in the abstract one.
    K = closure({0}, [(0, 1)], range(4))
    Kc = closure({0}, [(0, 1), (2, 3)], range(4))
    assert check_refinement(K, Kc, IDENTITY).holds
    assert not check_strong_mt(K, Kc, IDENTITY)
    assert check_strong_mt_prime(K, Kc, IDENTITY)
    w = one_step_witness(K, Kc, IDENTITY, reachable_only=False)
    assert (w.clause, w.concrete_state) == ("one-step", 3)


def test_compose_identity_shortcuts():
    assert compose_maps(IDENTITY, IDENTITY) is IDENTITY
    assert compose_maps(REFMAP, IDENTITY) is REFMAP
    double = compose_maps(table_map({1: 2}), table_map({0: 1}))
    assert double(0) == 2


def test_prop_pres_trivial_properties():
    K = closure({0}, [(0, 1)], range(2))
    res = check_prop_pres(K, K, IDENTITY, properties=[K.states, frozenset()], samples=0)
    assert res.proviso and res.results == ((True, True), (False, False)) and res.all_hold


def test_prop_pres_proviso():
    K = closure({0}, [(0, 1)], range(3))
    Kc = closure({0}, [(0, 2)], range(3))
    assert not check_prop_pres(K, Kc, IDENTITY).proviso


def test_rr_cycle_examples():
    K = closure({0}, [(0, 1)], range(2))
    # concrete model with no path to the bad state, refinement valid: true
    Kc = closure({0}, [], range(2))
    v = check_rr_cycle(K, Kc, IDENTITY, {1})
    assert v.holds and v.vacuous  # the reachable image of {1} is empty
    v = check_rr_cycle(K, Kc, IDENTITY, {1}, abstract_target={1})
    assert v.holds and not v.vacuous and v.abstract_ef and v.refinement.holds and not v.concrete_ef
    # attack persists: false with a counterexample
    v = check_rr_cycle(K, K, IDENTITY, {1})
    assert not v.holds and v.counterexample.steps == (0, 1)


# ---------------------------------------------------------------- random meta-theory

@st.composite
def refinement_pairs(draw):
    """(K, Kc, E) where the abstract edges include every image step, plus noise."""
    nc = draw(st.integers(1, 6))
    na = draw(st.integers(1, 4))
    E = {s: draw(st.integers(0, na - 1)) for s in range(nc)}
    c_edges = draw(st.sets(st.tuples(st.integers(0, nc - 1), st.integers(0, nc - 1))))
    c_init = draw(st.sets(st.integers(0, nc - 1), min_size=1))
    keep = draw(st.booleans())  # sometimes drop the image edges so strong_mt can fail
    a_edges = {(E[a], E[b]) for a, b in c_edges if keep or draw(st.booleans())}
    a_edges |= draw(st.sets(st.tuples(st.integers(0, na - 1), st.integers(0, na - 1)), max_size=3))
    a_init = {E[i] for i in c_init if keep or draw(st.booleans())} | draw(st.sets(st.integers(0, na - 1), max_size=1))
    if not a_init:
        a_init = {0}
    K = closure(a_init, a_edges, range(na))
    Kc = closure(c_init, c_edges, range(nc))
    return K, Kc, table_map(E)


@settings(max_examples=150, deadline=None)
@given(refinement_pairs())
def test_strong_mt_implies_refinement_and_prime(triple):
    K, Kc, E = triple
    if check_strong_mt(K, Kc, E):
        assert check_refinement(K, Kc, E).holds
        assert check_strong_mt_prime(K, Kc, E)
    if check_strong_mt_prime(K, Kc, E):
        assert check_refinement(K, Kc, E).holds


@settings(max_examples=150, deadline=None)
@given(refinement_pairs())
def test_reflexivity(triple):
    for M in triple[:2]:
        assert check_refinement(M, M, IDENTITY).holds


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_transitivity(data):
    K, K1, E1 = data.draw(refinement_pairs())
    # build K2 over K1's domain by refining K1 again
    n2 = data.draw(st.integers(1, 6))
    n1 = len(K1.system.domain)
    E2 = {s: data.draw(st.integers(0, n1 - 1)) for s in range(n2)}
    edges2 = data.draw(st.sets(st.tuples(st.integers(0, n2 - 1), st.integers(0, n2 - 1))))
    init2 = data.draw(st.sets(st.integers(0, n2 - 1), min_size=1))
    K2 = closure(init2, edges2, range(n2))
    E2 = table_map(E2)
    if check_refinement(K, K1, E1).holds and check_refinement(K1, K2, E2).holds:
        assert check_refinement(K, K2, compose_maps(E1, E2)).holds


@settings(max_examples=150, deadline=None)
@given(refinement_pairs(), st.integers(0, 2**16))
def test_prop_pres_spot_check(triple, seed):
    K, Kc, E = triple
    res = check_prop_pres(K, Kc, E, samples=16, seed=seed)
    if res.proviso:
        assert res.violations == 0


# ---------------------------------------------------------------- CWA pairs (reduced scenario)

def test_small_refmap_l0_l1(small_k):
    K0, K1 = small_k[0], small_k[1]
    assert check_init_ref(K0, K1, REFMAP)
    assert check_refinement(K0, K1, REFMAP).holds
    assert check_strong_mt_prime(K0, K1, REFMAP)


def test_small_l1_l2_identity(small_k):
    K1, K2 = small_k[1], small_k[2]
    assert check_refinement(K1, K2, IDENTITY).holds
    # A level-2 move bundles a move and a put: two level-1 steps, so the one-step clause fails.
    w = one_step_witness(K1, K2, IDENTITY, reachable_only=True)
    assert not w.holds and w.clause == "one-step"
    src, dst = w.concrete_init, w.concrete_state
    moved = [a for a in src.graph.actors if src.graph.location_of[a] != dst.graph.location_of[a]]
    assert len(moved) == 1
    assert src.graph.creds[moved[0]].index != dst.graph.creds[moved[0]].index
    assert not check_strong_mt_prime(K1, K2, IDENTITY)


def test_small_l2_l3_identity(small_k):
    assert check_strong_mt(small_k[2], small_k[3], IDENTITY)
    assert check_refinement(small_k[2], small_k[3], IDENTITY).holds


def test_composed_map_projects_to_roots(small_k):
    E = compose_maps(REFMAP, compose_maps(IDENTITY, IDENTITY))
    assert E is REFMAP
    s3 = max(small_k[3].states)  # some level-3 state
    s0 = E(s3)
    assert all(isinstance(c, int) for _, c in s0.graph.cgra)
    roots = {a: c.root for a, c in s3.graph.cgra}
    assert dict(s0.graph.cgra) == roots
    assert check_refinement(small_k[0], small_k[3], E).holds
