"""Explicit-state transition systems, Kripke closures and the EF/AG fragment.

States are arbitrary hashable, totally ordered values. Every search walks the
frontier in discovery order and expands successors in sorted order, so the
chosen witnesses never depend on set iteration order or on the number of
worker processes.
"""
from __future__ import annotations

import contextlib
import gc
import logging
import os
from collections.abc import Callable, Hashable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

log = logging.getLogger(__name__)

State = Hashable
Predicate = Callable[[Any], bool]

DEFAULT_MAX_STATES = 10**7
# Frontiers smaller than this are expanded in-process even when workers > 1.
PARALLEL_THRESHOLD = 256


class StateLimitExceeded(RuntimeError):
    """Raised when an exploration visits more states than its bound allows."""

    def __init__(self, limit: int, depth: int):
        super().__init__(
            f"state space exceeds max_states={limit} (at BFS depth {depth}); "
            "raise the bound or shrink the model"
        )
        self.limit = limit
        self.depth = depth


class _EdgeTable:
    """Picklable successor function backed by an adjacency dict."""

    def __init__(self, edges: Iterable[tuple[State, State]]):
        table: dict[State, set] = {}
        for a, b in edges:
            table.setdefault(a, set()).add(b)
        self.table = {a: frozenset(bs) for a, bs in table.items()}

    def __call__(self, s):
        return self.table.get(s, frozenset())

    def __eq__(self, other):
        return isinstance(other, _EdgeTable) and self.table == other.table

    def __hash__(self):
        return hash(frozenset(self.table.items()))


@dataclass(frozen=True)
class TransitionSystem:
    """A successor function, optionally with a finite declared state domain.

    ``step`` must be pure. It must also be picklable when the system is
    explored with more than one worker.
    """

    step: Callable[[Any], Iterable[Any]]
    domain: frozenset | None = None

    def successors(self, s) -> frozenset:
        return frozenset(self.step(s))

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[State, State]], domain=None) -> TransitionSystem:
        edges = list(edges)
        return cls(_EdgeTable(edges), None if domain is None else frozenset(domain))


@dataclass(frozen=True)
class KripkeStructure:
    states: frozenset
    init: frozenset
    system: TransitionSystem = field(compare=False)
    depth: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.init <= self.states:
            raise ValueError("initial states must be a subset of the state set")
        # Successor sets are memoised on first use: analyses such as
        # prop_pres run many searches over the same structure.
        object.__setattr__(self, "_succ", {})

    def successors(self, s) -> frozenset:
        hit = self._succ.get(s)
        if hit is None:
            hit = self._succ[s] = self.system.successors(s)
        return hit

    @property
    def relation(self) -> TransitionSystem:
        """The memoised successor function as a (process-local) transition system."""
        return TransitionSystem(self.successors, self.system.domain)

    def is_closed(self) -> bool:
        return all(self.successors(s) <= self.states for s in self.states)

    def unreachable_states(self) -> frozenset:
        """States not reachable from ``init``; empty for a genuine closure."""
        seen = set(self.init)
        stack = list(self.init)
        while stack:
            for t in self.successors(stack.pop()):
                if t in self.states and t not in seen:
                    seen.add(t)
                    stack.append(t)
        return self.states - seen


@dataclass(frozen=True)
class Trace:
    steps: tuple

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError("a trace has at least one state")

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        return self.steps[i]

    @property
    def first(self):
        return self.steps[0]

    @property
    def last(self):
        return self.steps[-1]

    @property
    def transitions(self) -> int:
        return len(self.steps) - 1

    def is_path_of(self, system: TransitionSystem) -> bool:
        return all(b in system.successors(a) for a, b in zip(self.steps, self.steps[1:]))

    def is_valid_for(self, K: KripkeStructure) -> bool:
        return self.first in K.init and self.is_path_of(K.system)


@dataclass(frozen=True)
class EFResult:
    holds: bool
    witnesses: dict = field(default_factory=dict)  # initial state -> Trace
    failing_init: Any = None


@dataclass(frozen=True)
class AGResult:
    holds: bool
    counterexample: Trace | None = None


@dataclass(frozen=True)
class SearchResult:
    """Outcome of an on-the-fly search: a trace to a target state or exhaustion."""

    trace: Trace | None
    explored: int
    depth: int

    @property
    def found(self) -> bool:
        return self.trace is not None


def as_predicate(target) -> Predicate:
    if callable(target):
        return target
    members = frozenset(target)
    return members.__contains__


def _expand_chunk(args):
    step, chunk = args
    return [sorted(frozenset(step(s))) for s in chunk]


class _Expander:
    def __init__(self, system: TransitionSystem, workers: int):
        self.system = system
        self.workers = max(1, int(workers))
        self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()

    def expand(self, frontier: Sequence) -> list[list]:
        if self.workers == 1 or len(frontier) < PARALLEL_THRESHOLD:
            return _expand_chunk((self.system.step, frontier))
        if self._pool is None:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        size = -(-len(frontier) // (self.workers * 4))
        chunks = [(self.system.step, frontier[i:i + size]) for i in range(0, len(frontier), size)]
        out: list[list] = []
        for part in self._pool.map(_expand_chunk, chunks):
            out.extend(part)
        return out


@contextlib.contextmanager
def _gc_paused():
    # States are acyclic tuples; the cyclic collector only adds rescans of a growing heap.
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _bfs(init, system, *, max_states, workers, stop=None):
    """Level-synchronous BFS. Returns (parents, depth, hit)."""
    with _gc_paused():
        return _bfs_inner(init, system, max_states=max_states, workers=workers, stop=stop)


def _bfs_inner(init, system, *, max_states, workers, stop):
    frontier = sorted(set(init))
    parents: dict = {s: None for s in frontier}
    if len(parents) > max_states:
        raise StateLimitExceeded(max_states, 0)
    if stop is not None:
        for s in frontier:
            if stop(s):
                return parents, 0, s
    depth = 0
    with _Expander(system, workers) as expander:
        while frontier:
            nxt = []
            for s, succs in zip(frontier, expander.expand(frontier)):
                for t in succs:
                    if t in parents:
                        continue
                    parents[t] = s
                    if len(parents) > max_states:
                        raise StateLimitExceeded(max_states, depth + 1)
                    if stop is not None and stop(t):
                        return parents, depth + 1, t
                    nxt.append(t)
            if nxt:
                depth += 1
            frontier = nxt
            log.debug("bfs depth=%d visited=%d frontier=%d", depth, len(parents), len(frontier))
    return parents, depth, None


def _path(parents: dict, end) -> Trace:
    out = [end]
    while parents[out[-1]] is not None:
        out.append(parents[out[-1]])
    return Trace(tuple(reversed(out)))


def resolve_max_states(max_states: int | None) -> int:
    if max_states is not None:
        return int(max_states)
    env = os.environ.get("RISKREF_MAX_STATES")
    return int(env) if env else DEFAULT_MAX_STATES


def reachability_closure(init: Iterable, system: TransitionSystem, *,
                         max_states: int | None = None, workers: int = 1) -> KripkeStructure:
    init = frozenset(init)
    if not init:
        raise ValueError("reachability closure needs a nonempty initial set")
    parents, depth, _ = _bfs(init, system, max_states=resolve_max_states(max_states), workers=workers)
    return KripkeStructure(frozenset(parents), init, system, depth)


def search(init: Iterable, system: TransitionSystem, target, *,
           max_states: int | None = None, workers: int = 1) -> SearchResult:
    """Shortest path from any initial state to a target state, explored on the fly.

    Stops at the first target state in BFS order, so it also terminates on
    state spaces whose full closure is out of reach.
    """
    pred = as_predicate(target)
    parents, depth, hit = _bfs(frozenset(init), system, max_states=resolve_max_states(max_states),
                               workers=workers, stop=pred)
    trace = None if hit is None else _path(parents, hit)
    return SearchResult(trace, len(parents), depth if hit is None else trace.transitions)


def find_path(K: KripkeStructure, start, target) -> Trace | None:
    if start not in K.states:
        raise ValueError("start state is not a state of the Kripke structure")
    pred = as_predicate(target)
    parents, _, hit = _bfs((start,), K.relation, max_states=len(K.states), workers=1, stop=pred)
    return None if hit is None else _path(parents, hit)


def check_EF(K: KripkeStructure, target) -> EFResult:
    """K |- EF target: every initial state reaches a target state."""
    pred = as_predicate(target)
    witnesses = {}
    for i in sorted(K.init):
        t = find_path(K, i, pred)
        if t is None:
            return EFResult(False, witnesses, failing_init=i)
        witnesses[i] = t
    return EFResult(True, witnesses)


def check_AG(K: KripkeStructure, safe) -> AGResult:
    """K |- AG safe: no reachable state violates ``safe``."""
    pred = as_predicate(safe)
    parents, _, hit = _bfs(K.init, K.relation, max_states=len(K.states), workers=1,
                           stop=lambda s: not pred(s))
    if hit is None:
        return AGResult(True)
    return AGResult(False, _path(parents, hit))
