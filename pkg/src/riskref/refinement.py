"""Refinement of Kripke structures under an abstraction map.

``K ⊑_E Kc`` holds when every concrete run from an initial state maps, under
``E``, to a run of the abstract structure starting in one of its initial
states. The strong variants are one-step sufficient conditions.
"""
from __future__ import annotations

import random
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from typing import Any

from .kripke import KripkeStructure, Trace, _gc_paused, as_predicate, check_EF


class AbstractionMap:
    """Total, pure map from concrete states to abstract states."""

    def __init__(self, fn: Callable[[Any], Any], name: str | None = None):
        self.fn = fn
        self.name = name or getattr(fn, "__name__", "map")

    def __call__(self, s):
        return self.fn(s)

    def image(self, states: Iterable) -> frozenset:
        return frozenset(map(self.fn, states))

    def __repr__(self):
        return f"AbstractionMap({self.name})"


def _identity(s):
    return s


IDENTITY = AbstractionMap(_identity, "identity")


class _Composed:
    def __init__(self, outer, inner):
        self.outer, self.inner = outer, inner

    def __call__(self, s):
        return self.outer(self.inner(s))


def compose_maps(E1: AbstractionMap, E2: AbstractionMap) -> AbstractionMap:
    """E1 ∘ E2: first E2 (concrete to middle), then E1 (middle to abstract)."""
    if E1 is IDENTITY:
        return E2
    if E2 is IDENTITY:
        return E1
    return AbstractionMap(_Composed(E1, E2), f"{E1.name}∘{E2.name}")


@dataclass(frozen=True)
class RefinementVerdict:
    holds: bool
    clause: str | None = None  # "init" | "reachability" | "one-step"
    concrete_init: Any = None
    concrete_state: Any = None
    abstract_state: Any = None
    vacuous: bool = False

    def __post_init__(self):
        if self.holds != (self.clause is None):
            raise ValueError("a failure witness is present exactly when the refinement fails")


class _Reach:
    """Memoised forward reachability in the abstract structure."""

    def __init__(self, K: KripkeStructure):
        self.K = K
        self.cache: dict = {}

    def __call__(self, a) -> frozenset:
        if a not in self.cache:
            seen = {a}
            stack = [a]
            while stack:
                for t in self.K.successors(stack.pop()):
                    if t not in seen:
                        seen.add(t)
                        stack.append(t)
            self.cache[a] = frozenset(seen)
        return self.cache[a]


def _concrete_reach(Kc: KripkeStructure, s) -> list:
    seen = {s}
    order = [s]
    i = 0
    while i < len(order):
        for t in sorted(Kc.successors(order[i])):
            if t not in seen:
                seen.add(t)
                order.append(t)
        i += 1
    return order


@_gc_paused()
def check_refinement(K: KripkeStructure, Kc: KripkeStructure, E: AbstractionMap) -> RefinementVerdict:
    reach = _Reach(K)
    for s in sorted(Kc.init):
        a = E(s)
        if a not in K.init:
            return RefinementVerdict(False, "init", s, s, a)
        for t in _concrete_reach(Kc, s):
            b = E(t)
            if b not in reach(a):
                return RefinementVerdict(False, "reachability", s, t, b)
    return RefinementVerdict(True, vacuous=not Kc.init)


def check_init_ref(K: KripkeStructure, Kc: KripkeStructure, E: AbstractionMap) -> bool:
    return E.image(Kc.init) <= K.init


def _one_step_failure(K, Kc, E, sources):
    for s in sorted(sources):
        a = E(s)
        abstract_next = K.successors(a)
        for t in sorted(Kc.successors(s)):
            if E(t) not in abstract_next:
                return s, t
    return None


@_gc_paused()
def one_step_witness(K: KripkeStructure, Kc: KripkeStructure, E: AbstractionMap,
                     reachable_only: bool) -> RefinementVerdict:
    """Verdict form of the strong conditions, naming the first failing step."""
    for s in sorted(Kc.init):
        if E(s) not in K.init:
            return RefinementVerdict(False, "init", s, s, E(s))
    domain = Kc.states if reachable_only or Kc.system.domain is None else Kc.system.domain
    bad = _one_step_failure(K, Kc, E, domain)
    if bad is None:
        return RefinementVerdict(True, vacuous=not Kc.init)
    s, t = bad
    return RefinementVerdict(False, "one-step", s, t, E(t))


def check_strong_mt(K: KripkeStructure, Kc: KripkeStructure, E: AbstractionMap) -> bool:
    """One-step simulation over the whole concrete domain, reachable or not.

    The domain is the transition system's declared ``domain``; without one,
    the only states known are the reachable ones.
    """
    return one_step_witness(K, Kc, E, reachable_only=False).holds


def check_strong_mt_prime(K: KripkeStructure, Kc: KripkeStructure, E: AbstractionMap) -> bool:
    return one_step_witness(K, Kc, E, reachable_only=True).holds


@dataclass(frozen=True)
class PropPresResult:
    proviso: bool
    detail: str = ""
    # (antecedent, consequent) per checked property, in input order
    results: tuple = ()

    @property
    def all_hold(self) -> bool:
        return self.proviso and all((not a) or c for a, c in self.results)

    @property
    def violations(self) -> int:
        return sum(1 for a, c in self.results if a and not c)


def sample_properties(states: Iterable, count: int, seed: int = 0) -> list[frozenset]:
    """Random subsets of ``states``; each state kept with a per-sample density."""
    pool = sorted(states)
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        density = rng.random()
        out.append(frozenset(s for s in pool if rng.random() < density))
    return out


@_gc_paused()
def check_prop_pres(K: KripkeStructure, Kc: KripkeStructure, E: AbstractionMap,
                    properties: Iterable[frozenset] = (), samples: int = 64,
                    seed: int = 0, refinement: RefinementVerdict | None = None) -> PropPresResult:
    """Spot-check (Kc |- EF s') ==> (K |- EF E`s') over supplied and sampled sets."""
    ref = refinement if refinement is not None else check_refinement(K, Kc, E)
    if not ref.holds:
        return PropPresResult(False, "proviso: refinement does not hold")
    if not K.init <= E.image(Kc.init):
        return PropPresResult(False, "proviso: init K is not covered by the image of init Kc")
    props = [frozenset(p) for p in properties]
    props += sample_properties(Kc.states, samples, seed)
    image = {x: E(x) for x in Kc.states}
    results = []
    for p in props:
        ante = check_EF(Kc, p).holds
        cons = check_EF(K, frozenset(image[x] if x in image else E(x) for x in p)).holds
        results.append((ante, cons))
    return PropPresResult(True, results=tuple(results))


@dataclass(frozen=True)
class RRCycleVerdict:
    holds: bool
    abstract_ef: bool
    refinement: RefinementVerdict
    concrete_ef: bool
    counterexample: Trace | None = None
    vacuous: bool = False
    notes: tuple = field(default_factory=tuple)


@_gc_paused()
def check_rr_cycle(K: KripkeStructure, Kc: KripkeStructure, E: AbstractionMap, s,
                   refinement: RefinementVerdict | None = None,
                   abstract_target=None) -> RRCycleVerdict:
    """(K |- EF E`s  and  K ⊑_E Kc)  -->  not (Kc |- EF s).

    ``s`` may be a set or a predicate over concrete states. By default its
    image is taken over the concrete reachable states, which decides the
    implication exactly whenever the refinement holds. When ``s`` is given
    as a predicate over the whole concrete domain, callers that know its
    image in closed form pass it as ``abstract_target``.
    """
    pred = as_predicate(s)
    if abstract_target is None:
        abstract_target = E.image(x for x in Kc.states if pred(x))
    abstract_ef = check_EF(K, abstract_target).holds
    ref = refinement if refinement is not None else check_refinement(K, Kc, E)
    ef = check_EF(Kc, pred)
    antecedent = abstract_ef and ref.holds
    holds = not (antecedent and ef.holds)
    notes = []
    if not K.init:
        notes.append("vacuous: abstract structure has no initial state")
    if not antecedent:
        notes.append("vacuous: antecedent is false")
    cex = None
    if not holds and ef.witnesses:
        cex = ef.witnesses[min(ef.witnesses)]
    return RRCycleVerdict(holds, abstract_ef, ref, ef.holds, cex, not antecedent, tuple(notes))

__all__ = [
    "AbstractionMap", "IDENTITY", "compose_maps", "RefinementVerdict", "check_refinement",
    "check_init_ref", "check_strong_mt", "check_strong_mt_prime", "one_step_witness",
    "PropPresResult", "check_prop_pres", "sample_properties", "RRCycleVerdict",
    "check_rr_cycle",
]
