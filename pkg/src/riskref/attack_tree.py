"""Attack trees over state sets: validity, refinement, synthesis from traces.

A tree node claims that every state of its source set can reach its target
set. Validity is decided constructively against a one-step transition
relation; ``correctness_check`` cross-checks a valid tree against EF.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

from .kripke import KripkeStructure, TransitionSystem, Trace, check_EF, search


class AttackTreeError(ValueError):
    pass


class InvalidPosition(AttackTreeError):
    pass


class PairMismatch(AttackTreeError):
    pass


@dataclass(frozen=True)
class AttackPair:
    source: frozenset
    target: frozenset

    def __post_init__(self):
        object.__setattr__(self, "source", frozenset(self.source))
        object.__setattr__(self, "target", frozenset(self.target))
        if not self.source:
            raise AttackTreeError("attack pair needs a nonempty source set")


@dataclass(frozen=True)
class Base:
    pair: AttackPair
    kind = "base"

    @property
    def children(self) -> tuple:
        return ()


@dataclass(frozen=True)
class And:
    children: tuple
    pair: AttackPair
    kind = "and"

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise AttackTreeError("and-node needs at least one child")


@dataclass(frozen=True)
class Or:
    children: tuple
    pair: AttackPair
    kind = "or"

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise AttackTreeError("or-node needs at least one child")


AttackTree = Base | And | Or


def attack_pair(A: AttackTree) -> AttackPair:
    return A.pair


def is_valid_attack(A: AttackTree, system: TransitionSystem) -> bool:
    I, s = A.pair.source, A.pair.target
    if isinstance(A, Base):
        return all(not s.isdisjoint(system.successors(i)) for i in I)
    if isinstance(A, And):
        kids = A.children
        if not all(is_valid_attack(c, system) for c in kids):
            return False
        if not I <= kids[0].pair.source:
            return False
        if any(not a.pair.target <= b.pair.source for a, b in zip(kids, kids[1:])):
            return False
        return kids[-1].pair.target <= s
    # Or: each source state needs one valid child that starts there and lands inside s.
    covering = [c for c in A.children if c.pair.target <= s and is_valid_attack(c, system)]
    return all(any(i in c.pair.source for c in covering) for i in I)


def synthesize_attack(trace: Trace | Sequence) -> And:
    """Sequential and-attack of singleton base steps along ``trace``."""
    steps = tuple(trace)
    if len(steps) < 2:
        raise AttackTreeError("a trace with a single state contains no attack step")
    bases = tuple(Base(AttackPair({a}, {b})) for a, b in zip(steps, steps[1:]))
    return And(bases, AttackPair({steps[0]}, {steps[-1]}))


def subtree(A: AttackTree, position: Sequence[int]) -> AttackTree:
    node = A
    for depth, k in enumerate(position):
        kids = node.children
        if not 0 <= k < len(kids):
            raise InvalidPosition(f"no child {k} at depth {depth} (node has {len(kids)})")
        node = kids[k]
    return node


def refine_tree(A: AttackTree, position: Sequence[int], replacement: AttackTree) -> AttackTree:
    position = tuple(position)
    target = subtree(A, position)
    if replacement.pair != target.pair:
        raise PairMismatch("refinement must keep the attack pair of the replaced node")
    return _replace(A, position, replacement)


def _replace(node, position, replacement):
    if not position:
        return replacement
    k, rest = position[0], position[1:]
    kids = list(node.children)
    kids[k] = _replace(kids[k], rest, replacement)
    return type(node)(tuple(kids), node.pair)


@dataclass(frozen=True)
class CorrectnessVerdict:
    status: str  # "confirmed" | "not-valid" | "soundness-violation" | "precondition-violation"
    valid: bool
    ef_holds: bool | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("confirmed", "not-valid")


def correctness_check(A: AttackTree, K: KripkeStructure) -> CorrectnessVerdict:
    """A valid tree must imply K |- EF target(A)."""
    pair = A.pair
    if not pair.source <= K.init:
        return CorrectnessVerdict("precondition-violation", False,
                                  detail="attack source is not contained in init K")
    if not is_valid_attack(A, K.system):
        return CorrectnessVerdict("not-valid", False, detail="check skipped: tree is not a valid attack")
    ef = check_EF(K, pair.target)
    if ef.holds:
        return CorrectnessVerdict("confirmed", True, True)
    return CorrectnessVerdict("soundness-violation", True, False,
                              detail=f"valid tree but EF fails from {ef.failing_init!r}")


def correctness_check_on_the_fly(A: AttackTree, init, system: TransitionSystem, *,
                                 max_states: int | None = None, workers: int = 1) -> CorrectnessVerdict:
    """``correctness_check`` without a precomputed closure of ``init``.

    EF is decided per initial state by a bounded on-the-fly search.
    """
    init = frozenset(init)
    if not A.pair.source <= init:
        return CorrectnessVerdict("precondition-violation", False,
                                  detail="attack source is not contained in the initial states")
    if not is_valid_attack(A, system):
        return CorrectnessVerdict("not-valid", False, detail="check skipped: tree is not a valid attack")
    for i in sorted(init):
        if not search({i}, system, A.pair.target, max_states=max_states, workers=workers).found:
            return CorrectnessVerdict("soundness-violation", True, False,
                                      detail=f"valid tree but EF fails from {i!r}")
    return CorrectnessVerdict("confirmed", True, True)


def _fmt_set(states, label):
    return "{" + ",".join(sorted(label(s) for s in states)) + "}"


def render_tree(A: AttackTree, label: Callable[[Any], str] = str) -> str:
    """Text form: ``N(I->s)``, ``AND[...](I->s)``, ``OR[...](I->s)``."""
    pair = f"({_fmt_set(A.pair.source, label)}->{_fmt_set(A.pair.target, label)})"
    if isinstance(A, Base):
        return "N" + pair
    kids = ",".join(render_tree(c, label) for c in A.children)
    return f"{A.kind.upper()}[{kids}]{pair}"


def tree_to_json(A: AttackTree, label: Callable[[Any], str] = str) -> dict:
    return {
        "kind": A.kind,
        "children": [tree_to_json(c, label) for c in A.children],
        "source": sorted(label(s) for s in A.pair.source),
        "target": sorted(label(s) for s in A.pair.target),
    }
