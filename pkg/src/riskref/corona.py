"""Contact-tracing infrastructure model at four refinement levels.

Level 0 gives every actor one fixed ephemeral id. Level 1 replaces it by a
rotating id list that ``put`` advances. Level 2 bundles an id rotation into
every ``move``. Level 3 additionally blocks moves into locations with fewer
than three actors or out of locations with fewer than four.

States are immutable and canonical: every set is stored as a sorted tuple,
so equality, hashing and ordering are structural.
"""
from __future__ import annotations

import enum
import hashlib
import itertools
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

Efid = int  # ``Efid n`` is represented by the natural number n


class UnknownEfid(LookupError):
    pass


@dataclass(frozen=True, order=True)
class EfidList:
    """Rotation list of ephemeral ids; entry 0 is the daily root."""

    entries: tuple
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("an efid list has at least one entry")
        if not 0 <= self.index < len(self.entries):
            raise ValueError(f"index {self.index} outside list of length {len(self.entries)}")
        object.__setattr__(self, "_hash", hash((self.entries, self.index)))

    def __hash__(self):
        return self._hash

    @property
    def root(self) -> Efid:
        return self.entries[0]

    @property
    def current(self) -> Efid:
        return self.entries[self.index]

    def incremented(self, saturate: bool = False) -> EfidList:
        n = len(self.entries)
        if saturate:
            return self if self.index == n - 1 else EfidList(self.entries, self.index + 1)
        return EfidList(self.entries, (self.index + 1) % n)


Credential = Union[Efid, EfidList]


def efids_root(c: Credential) -> Efid:
    return c.root if isinstance(c, EfidList) else c


def efids_cur(c: Credential) -> Efid:
    return c.current if isinstance(c, EfidList) else c


def efids_index(c: Credential) -> int:
    return c.index if isinstance(c, EfidList) else 0


def efids_list(c: Credential) -> tuple:
    return c.entries if isinstance(c, EfidList) else (c,)


def efids_inc_ind(c: EfidList, saturate: bool = False) -> EfidList:
    return c.incremented(saturate)


class Action(str, enum.Enum):
    GET = "get"
    MOVE = "move"
    PUT = "put"


class Level(enum.IntEnum):
    L0 = 0
    L1 = 1
    L2 = 2
    L3 = 3


@dataclass(frozen=True)
class PolicyRule:
    """Actors in ``who`` (everyone when None) may perform ``actions``."""

    who: frozenset | None
    actions: frozenset

    def permits(self, actor: str, action: Action) -> bool:
        return action in self.actions and (self.who is None or actor in self.who)


@dataclass(frozen=True)
class LocalPolicies:
    rules: tuple  # ((location, (PolicyRule, ...)), ...)

    @cached_property
    def table(self) -> dict:
        return dict(self.rules)

    def at(self, location: str) -> tuple:
        return self.table.get(location, ())

    @cached_property
    def _memo(self) -> dict:
        return {}

    def allows(self, location: str, actor: str, action: Action) -> bool:
        key = (location, actor, action)
        hit = self._memo.get(key)
        if hit is None:
            hit = self._memo[key] = any(r.permits(actor, action) for r in self.at(location))
        return hit

    def __hash__(self):
        return hash(self.rules)


# Canonical tuples recur across millions of states; sharing one copy of each
# keeps a closure's memory proportional to the number of distinct components.
_SHARED: dict = {}


_SHARED_LIMIT = 4_000_000


def _share(t: tuple) -> tuple:
    if len(_SHARED) > _SHARED_LIMIT:
        _SHARED.clear()
    return _SHARED.setdefault(t, t)


def release_shared() -> None:
    """Forget the shared component table, e.g. after an abandoned exploration."""
    _SHARED.clear()


def _freeze(mapping: dict) -> tuple:
    return tuple(sorted((k, tuple(sorted(v))) for k, v in mapping.items()))


@dataclass(frozen=True, order=True)
class Igraph:
    gra: tuple     # sorted (location, location) pairs
    agra: tuple    # (location, sorted actors) for every node
    cgra: tuple    # (actor, credential) sorted by actor
    lgra: tuple    # (location, opaque blob), carried and never read
    egra: tuple    # (location, sorted efids) for every node
    kgra: tuple    # ((actor, location), sorted (identity, efid) pairs), nonempty entries only

    @cached_property
    def _hash(self) -> int:
        return hash((self.gra, self.agra, self.cgra, self.lgra, self.egra, self.kgra))

    def __hash__(self):
        return self._hash

    @cached_property
    def actors_at(self) -> dict:
        return {l: frozenset(a) for l, a in self.agra}

    @cached_property
    def location_of(self) -> dict:
        return {a: l for l, actors in self.agra for a in actors}

    @cached_property
    def creds(self) -> dict:
        return dict(self.cgra)

    @cached_property
    def efids_at(self) -> dict:
        return {l: frozenset(e) for l, e in self.egra}

    @cached_property
    def knowledge(self) -> dict:
        return {k: frozenset(v) for k, v in self.kgra}

    @cached_property
    def nodes(self) -> tuple:
        return tuple(l for l, _ in self.agra)

    @cached_property
    def actors(self) -> tuple:
        return tuple(sorted(self.location_of))

    _VIEWS = ("actors_at", "location_of", "creds", "efids_at", "knowledge", "nodes", "actors")

    def release_views(self) -> None:
        """Drop the cached dict views; closures keep millions of expanded states."""
        for name in self._VIEWS:
            self.__dict__.pop(name, None)

    def knows(self, actor: str, location: str) -> frozenset:
        return self.knowledge.get((actor, location), frozenset())

    def replace(self, *, agra=None, cgra=None, egra=None, kgra=None) -> Igraph:
        return Igraph(
            self.gra,
            self.agra if agra is None else _freeze(agra),
            self.cgra if cgra is None else tuple(sorted(cgra.items())),
            self.lgra,
            self.egra if egra is None else _freeze(egra),
            self.kgra if kgra is None else _freeze({k: v for k, v in kgra.items() if v}),
        )

    def update(self, *, agra=None, cgra=None, egra=None, kgra=None) -> Igraph:
        """Copy with some canonical components replaced verbatim."""
        return Igraph(self.gra,
                      self.agra if agra is None else _share(agra),
                      self.cgra if cgra is None else _share(cgra),
                      self.lgra,
                      self.egra if egra is None else _share(egra),
                      self.kgra if kgra is None else _share(kgra))


def _assoc(table: tuple, key, value, keep_empty: bool = True) -> tuple:
    """Set ``key`` in a sorted (key, value) tuple, keeping it sorted."""
    out = [(k, v) for k, v in table if k != key]
    if keep_empty or value:
        out.append(_share((key, value)))
        out.sort()
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Infrastructure:
    graph: Igraph
    delta: LocalPolicies = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash(self.graph))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Infrastructure):
            return NotImplemented
        return self._hash == other._hash and self.graph == other.graph and self.delta == other.delta

    def __lt__(self, other):
        return self.graph < other.graph

    def __le__(self, other):
        return self.graph <= other.graph

    def __gt__(self, other):
        return self.graph > other.graph

    def __ge__(self, other):
        return self.graph >= other.graph

    def with_graph(self, graph: Igraph) -> Infrastructure:
        return Infrastructure(graph, self.delta)


def enables(I: Infrastructure, l: str, a: str, act: Action) -> bool:
    return I.delta.allows(l, a, Action(act))


def _at(I: Infrastructure, a: str, l: str) -> bool:
    return I.graph.location_of.get(a) == l


def step_get(I: Infrastructure, a: str, l: str, level: Level = Level.L0) -> Infrastructure | None:
    """Actor ``a`` records every (present actor, present efid) pair at ``l``."""
    if not _at(I, a, l) or not enables(I, l, a, Action.GET):
        return None
    g = I.graph
    pairs = _share(tuple(sorted(itertools.product(g.actors_at[l], g.efids_at[l]))))
    return I.with_graph(g.update(kgra=_assoc(g.kgra, (a, l), pairs, keep_empty=False)))


def move_allowed(I: Infrastructure, a: str, l: str, l2: str, level: Level,
                 moves_require_edge: bool = False) -> bool:
    g = I.graph
    if not _at(I, a, l) or l2 not in g.actors_at:
        return False
    if not enables(I, l2, a, Action.MOVE):
        return False
    if moves_require_edge and (l, l2) not in g.gra:
        return False
    if level >= Level.L3 and l != l2:
        if len(g.actors_at[l2]) < 3 or len(g.actors_at[l]) < 4:
            return False
    return True


def step_move(I: Infrastructure, a: str, l: str, l2: str, level: Level = Level.L0, *,
              moves_require_edge: bool = False, saturate: bool = False) -> Infrastructure | None:
    """Move ``a`` from ``l`` to ``l2``; from level 2 on the move also rotates a's id."""
    if not move_allowed(I, a, l, l2, Level(level), moves_require_edge):
        return None
    if l == l2:
        return I
    g = I.graph
    old = g.creds[a]
    new = efids_inc_ind(old, saturate) if level >= Level.L2 else old
    agra = _assoc(g.agra, l, tuple(sorted(g.actors_at[l] - {a})))
    agra = _assoc(agra, l2, tuple(sorted(g.actors_at[l2] | {a})))
    egra = _assoc(g.egra, l, tuple(sorted(g.efids_at[l] - {efids_cur(old)})))
    egra = _assoc(egra, l2, tuple(sorted(g.efids_at[l2] | {efids_cur(new)})))
    cgra = g.cgra if new is old else _assoc(g.cgra, a, new)
    return I.with_graph(g.update(agra=agra, cgra=cgra, egra=egra))


def step_put(I: Infrastructure, a: str, l: str, level: Level = Level.L0, *,
             saturate: bool = False) -> Infrastructure | None:
    """Rotate a's broadcast id at ``l``; the identity transition at level 0."""
    if not _at(I, a, l) or not enables(I, l, a, Action.PUT):
        return None
    if level == Level.L0:
        return I
    g = I.graph
    old = g.creds[a]
    new = efids_inc_ind(old, saturate)
    if new == old:
        return I
    efids = (g.efids_at[l] - {efids_cur(old)}) | {efids_cur(new)}
    egra = _assoc(g.egra, l, tuple(sorted(efids)))
    return I.with_graph(g.update(cgra=_assoc(g.cgra, a, new), egra=egra))


def action_label(action: Action, actor: str, l: str, l2: str | None = None) -> str:
    if action is Action.MOVE:
        return f"move({actor}:{l}->{l2})"
    return f"{action.value}({actor}@{l})"


@dataclass(frozen=True)
class Semantics:
    """The one-step relation at a level, usable as a ``TransitionSystem`` step."""

    level: Level
    attacker: str
    knowledge: str = "all"  # "all" | "attacker-only"
    standalone_put: bool = True
    moves_require_edge: bool = False
    saturate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if self.knowledge not in ("all", "attacker-only"):
            raise ValueError(f"unknown knowledge mode {self.knowledge!r}")

    def labeled_successors(self, I: Infrastructure) -> list:
        g = I.graph
        out = []
        for a in g.actors:
            l = g.location_of[a]
            if self.knowledge == "all" or a == self.attacker:
                nxt = step_get(I, a, l, self.level)
                if nxt is not None:
                    out.append((action_label(Action.GET, a, l), nxt))
            for l2 in g.nodes:
                if l2 == l:
                    continue
                nxt = step_move(I, a, l, l2, self.level, moves_require_edge=self.moves_require_edge,
                                saturate=self.saturate)
                if nxt is not None:
                    out.append((action_label(Action.MOVE, a, l, l2), nxt))
            if self.standalone_put or self.level < Level.L2:
                nxt = step_put(I, a, l, self.level, saturate=self.saturate)
                if nxt is not None:
                    out.append((action_label(Action.PUT, a, l), nxt))
        return out

    def __call__(self, I: Infrastructure) -> frozenset:
        out = frozenset(s for _, s in self.labeled_successors(I))
        I.graph.release_views()
        return out


def successors_infra(I: Infrastructure, level: Level, attacker: str = "Eve", **options) -> frozenset:
    return Semantics(Level(level), attacker, **options)(I)


def identifiable(eid: Efid, A) -> bool:
    return sum(1 for _, e in A if e == eid) == 1


def _observations(I: Infrastructure, attacker: str):
    """Per nonempty location subset: the intersected knowledge minus attacker pairs.

    Subsets touching a location where the attacker knows nothing intersect to
    the empty set and are skipped; they can never identify an efid.
    """
    g = I.graph
    known = {}
    for l in g.nodes:
        pairs = frozenset(p for p in g.knows(attacker, l) if p[0] != attacker)
        if pairs:
            known[l] = pairs
    if len(known) < len(g.nodes):
        candidates = sorted(known)
    else:
        candidates = list(g.nodes)
    for r in range(1, len(candidates) + 1):
        for subset in itertools.combinations(candidates, r):
            yield subset, frozenset.intersection(*(known[l] for l in subset))


def global_policy(I: Infrastructure, eid: Efid, attacker: str = "Eve") -> bool:
    return not any(identifiable(eid, obs) for _, obs in _observations(I, attacker))


def identified_efids(I: Infrastructure, attacker: str = "Eve") -> frozenset:
    """Every efid that some location subset pins to a single identity."""
    out = set()
    for _, obs in _observations(I, attacker):
        counts = Counter(e for _, e in obs)
        out.update(e for e, n in counts.items() if n == 1)
    return frozenset(out)


@dataclass(frozen=True)
class Scorona:
    """Bad-state predicate: some efid of the universe violates the global policy."""

    attacker: str
    universe: frozenset

    def __call__(self, I: Infrastructure) -> bool:
        return not identified_efids(I, self.attacker).isdisjoint(self.universe)


@dataclass(frozen=True)
class GlobalPolicyHolds:
    """Safety predicate: every efid of the universe satisfies the global policy."""

    attacker: str
    universe: frozenset

    def __call__(self, I: Infrastructure) -> bool:
        return identified_efids(I, self.attacker).isdisjoint(self.universe)


def scorona_set(universe, attacker: str = "Eve") -> Scorona:
    return Scorona(attacker, frozenset(universe))


def anonymous_actor(I: Infrastructure, e: Efid) -> str:
    owners = [a for a, c in I.graph.cgra if e in efids_list(c)]
    if not owners:
        raise UnknownEfid(f"Efid {e} belongs to no actor")
    if len(owners) > 1:
        raise UnknownEfid(f"Efid {e} is shared by {', '.join(owners)}")
    return owners[0]


def refmap(I: Infrastructure) -> Infrastructure:
    """Project a level-1+ state onto level 0 by replacing every id with its root."""
    g = I.graph
    owner_root = {}
    for a, c in g.cgra:
        for e in efids_list(c):
            owner_root[e] = efids_root(c)
    roots = {a: efids_root(c) for a, c in g.cgra}
    egra = {l: {roots[a] for a in actors} for l, actors in g.actors_at.items()}
    actors = set(g.location_of)
    kgra = {}
    for (a, l), pairs in g.knowledge.items():
        if a not in actors or l not in g.actors_at:
            continue
        mapped = set()
        for x, y in pairs:
            if y not in owner_root:
                raise UnknownEfid(f"Efid {y} belongs to no actor")
            mapped.add((x, owner_root[y]))
        kgra[(a, l)] = mapped
    return I.with_graph(g.replace(cgra=roots, egra=egra, kgra=kgra))


def violates_invariants(I: Infrastructure) -> list[str]:
    """Structural checks on one state: placement and efid bookkeeping."""
    g = I.graph
    problems = []
    seen = Counter(a for _, actors in g.agra for a in actors)
    for a, n in seen.items():
        if n != 1:
            problems.append(f"{a} occupies {n} locations")
    for l, actors in g.actors_at.items():
        current = {efids_cur(g.creds[a]) for a in actors}
        if g.efids_at[l] != current:
            problems.append(f"egra({l}) differs from the current efids of its actors")
    return problems


def state_to_json(I: Infrastructure) -> dict:
    g = I.graph

    def cred(c):
        if isinstance(c, EfidList):
            return {"entries": list(c.entries), "index": c.index}
        return c

    return {
        "gra": [list(p) for p in g.gra],
        "agra": {l: list(a) for l, a in g.agra},
        "cgra": {a: cred(c) for a, c in g.cgra},
        "egra": {l: list(e) for l, e in g.egra},
        "kgra": {f"{a}@{l}": [list(p) for p in pairs] for (a, l), pairs in g.kgra},
    }


def state_label(I: Infrastructure) -> str:
    """Short stable label: a digest of the canonical state encoding."""
    digest = hashlib.sha1(repr(I.graph).encode()).hexdigest()[:10]
    return f"s{digest}"


def build_kripke(scenario, level=None, *, workers: int = 1, max_states: int | None = None, **options):
    from .kripke import TransitionSystem, reachability_closure
    from .scenario import initial_infrastructure, semantics_for

    lvl = scenario.level if level is None else Level(level)
    sem = semantics_for(scenario, lvl, **options)
    init = initial_infrastructure(scenario, lvl)
    bound = scenario.max_states if max_states is None else max_states
    return reachability_closure({init}, TransitionSystem(sem), max_states=bound, workers=workers)
