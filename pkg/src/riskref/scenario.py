"""Scenario documents, chain manifests, and JSON/text renderings of results."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .attack_tree import tree_to_json
from .corona import (
    Action,
    EfidList,
    Igraph,
    Infrastructure,
    Level,
    LocalPolicies,
    PolicyRule,
    Semantics,
    efids_cur,
    state_label,
    state_to_json,
)
from .kripke import Trace

FORMAT_VERSION = 1
_TOP_KEYS = {"format", "locations", "edges", "actors", "policies", "attacker", "level",
             "bounds", "moves_require_edge", "data"}
_ACTIONS = {a.value for a in Action}


class ScenarioError(ValueError):
    """A scenario or manifest document failed to parse or validate."""


class ScenarioParseError(ScenarioError):
    def __init__(self, msg: str, line: int, column: int):
        super().__init__(f"{msg} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ActorSpec:
    name: str
    location: str
    efids: tuple


@dataclass(frozen=True)
class PolicySpec:
    who: tuple | None  # None means any actor
    actions: tuple


@dataclass(frozen=True)
class Scenario:
    locations: tuple
    edges: tuple
    actors: tuple        # ActorSpec, sorted by name
    policies: tuple      # (location, (PolicySpec, ...)), sorted by location
    attacker: str
    level: Level = Level.L0
    max_states: int | None = None  # None defers to RISKREF_MAX_STATES, then the default
    moves_require_edge: bool = False
    data: tuple = ()     # (location, opaque string)

    @property
    def efid_universe(self) -> frozenset:
        return frozenset(e for a in self.actors for e in a.efids)

    def actor(self, name: str) -> ActorSpec:
        for a in self.actors:
            if a.name == name:
                return a
        raise KeyError(name)


def _fail(msg: str):
    raise ScenarioError(msg)


def _is_nat(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and x >= 0


def load_scenario(document: str) -> Scenario:
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, exc.lineno, exc.colno) from None
    return scenario_from_dict(raw)


def load_scenario_file(path) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def scenario_from_dict(raw) -> Scenario:
    if not isinstance(raw, dict):
        _fail("scenario must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        _fail(f"unknown scenario field {unknown[0]!r}")
    if raw.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        _fail(f"unsupported format version {raw.get('format')!r}")
    for key in ("locations", "edges", "actors", "attacker"):
        if key not in raw:
            _fail(f"missing required field {key!r}")

    locations = raw["locations"]
    if not isinstance(locations, list) or not locations or not all(isinstance(l, str) for l in locations):
        _fail("locations must be a nonempty list of names")
    if len(set(locations)) != len(locations):
        _fail("duplicate location name")
    declared = set(locations)

    edges = []
    if not isinstance(raw["edges"], list):
        _fail("edges must be a list of location pairs")
    for e in raw["edges"]:
        if not (isinstance(e, list) and len(e) == 2):
            _fail(f"edge {e!r} is not a pair")
        for end in e:
            if end not in declared:
                _fail(f"edge {e!r} references unknown location {end!r}")
        edges.append(tuple(e))

    if not isinstance(raw["actors"], dict) or not raw["actors"]:
        _fail("actors must be a nonempty object")
    actors = []
    owner = {}
    for name in sorted(raw["actors"]):
        spec = raw["actors"][name]
        if not isinstance(spec, dict) or set(spec) != {"location", "efids"}:
            _fail(f"actor {name!r} needs exactly the fields 'location' and 'efids'")
        if spec["location"] not in declared:
            _fail(f"actor {name!r} is placed at unknown location {spec['location']!r}")
        efids = spec["efids"]
        if not isinstance(efids, list) or not efids or not all(_is_nat(e) for e in efids):
            _fail(f"actor {name!r} needs a nonempty list of natural efids")
        if len(set(efids)) != len(efids):
            _fail(f"actor {name!r} repeats an efid")
        for e in efids:
            if e in owner:
                _fail(f"efid ranges not disjoint: {owner[e]} and {name} share Efid {e}")
            owner[e] = name
        actors.append(ActorSpec(name, spec["location"], tuple(efids)))
    names = {a.name for a in actors}

    policies_raw = raw.get("policies", {})
    if not isinstance(policies_raw, dict):
        _fail("policies must map locations to rule lists")
    policies = []
    for loc in sorted(policies_raw):
        if loc not in declared:
            _fail(f"policy for unknown location {loc!r}")
        rules = []
        if not isinstance(policies_raw[loc], list):
            _fail(f"policies for {loc!r} must be a list")
        for rule in policies_raw[loc]:
            if not isinstance(rule, dict) or set(rule) != {"who", "actions"}:
                _fail(f"policy rule at {loc!r} needs exactly 'who' and 'actions'")
            who = rule["who"]
            if who == "any":
                who = None
            elif isinstance(who, list) and all(w in names for w in who):
                who = tuple(sorted(set(who)))
            else:
                _fail(f"policy rule at {loc!r} names an unknown actor in {who!r}")
            acts = rule["actions"]
            if not isinstance(acts, list) or not set(acts) <= _ACTIONS:
                _fail(f"policy rule at {loc!r} has an unknown action in {acts!r}")
            rules.append(PolicySpec(who, tuple(sorted(set(acts)))))
        policies.append((loc, tuple(rules)))

    attacker = raw["attacker"]
    if attacker not in names:
        _fail(f"attacker {attacker!r} is not a declared actor")
    level = raw.get("level", 0)
    if level not in (0, 1, 2, 3) or isinstance(level, bool):
        _fail(f"level must be 0..3, got {level!r}")
    bounds = raw.get("bounds", {})
    if not isinstance(bounds, dict) or set(bounds) - {"max_states"}:
        _fail("bounds may only contain 'max_states'")
    max_states = bounds.get("max_states")
    if max_states is not None and (not _is_nat(max_states) or max_states == 0):
        _fail("bounds.max_states must be a positive integer")
    mre = raw.get("moves_require_edge", False)
    if not isinstance(mre, bool):
        _fail("moves_require_edge must be a boolean")
    data = raw.get("data", {})
    if not isinstance(data, dict) or not set(data) <= declared:
        _fail("data must map declared locations to values")
    data = tuple(sorted((l, json.dumps(v, sort_keys=True)) for l, v in data.items()))

    return Scenario(tuple(locations), tuple(edges), tuple(actors), tuple(policies), attacker,
                    Level(level), max_states, mre, data)


def scenario_to_dict(s: Scenario) -> dict:
    out = {
        "format": FORMAT_VERSION,
        "locations": list(s.locations),
        "edges": [list(e) for e in s.edges],
        "actors": {a.name: {"location": a.location, "efids": list(a.efids)} for a in s.actors},
        "policies": {
            loc: [{"who": "any" if r.who is None else list(r.who), "actions": list(r.actions)}
                  for r in rules]
            for loc, rules in s.policies
        },
        "attacker": s.attacker,
        "level": int(s.level),
    }
    if s.max_states is not None:
        out["bounds"] = {"max_states": s.max_states}
    if s.moves_require_edge:
        out["moves_require_edge"] = True
    if s.data:
        out["data"] = {l: json.loads(v) for l, v in s.data}
    return out


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def local_policies(s: Scenario) -> LocalPolicies:
    rules = []
    for loc, specs in s.policies:
        rules.append((loc, tuple(
            PolicyRule(None if p.who is None else frozenset(p.who), frozenset(Action(a) for a in p.actions))
            for p in specs)))
    return LocalPolicies(tuple(rules))


def initial_infrastructure(s: Scenario, level=None) -> Infrastructure:
    lvl = s.level if level is None else Level(level)
    agra = {l: set() for l in s.locations}
    cgra = {}
    for a in s.actors:
        agra[a.location].add(a.name)
        cgra[a.name] = a.efids[0] if lvl == Level.L0 else EfidList(a.efids, 0)
    egra = {l: {efids_cur(cgra[a]) for a in agra[l]} for l in s.locations}
    base = Igraph(tuple(sorted(set(s.edges))), (), (), s.data, (), ())
    return Infrastructure(base.replace(agra=agra, cgra=cgra, egra=egra, kgra={}), local_policies(s))


def semantics_for(s: Scenario, level=None, *, knowledge: str = "attacker-only", standalone_put: bool = True,
                  moves_require_edge: bool | None = None, saturate: bool = False) -> Semantics:
    lvl = s.level if level is None else Level(level)
    mre = s.moves_require_edge if moves_require_edge is None else moves_require_edge
    return Semantics(lvl, s.attacker, knowledge, standalone_put, mre, saturate)


# ---------------------------------------------------------------- traces

def annotate(trace: Trace, semantics: Semantics) -> list[str]:
    """Action label per step; the least label wins when several rules coincide."""
    out = []
    for a, b in zip(trace, list(trace)[1:]):
        labels = sorted(lbl for lbl, nxt in semantics.labeled_successors(a) if nxt == b)
        out.append(labels[0] if labels else "?")
    return out


def _delta(a: dict, b: dict) -> dict:
    diff = {}
    for comp in b:
        before, after = a.get(comp, {}), b[comp]
        if not isinstance(after, dict):
            continue
        changed = {k: after.get(k) for k in sorted(set(before) | set(after)) if before.get(k) != after.get(k)}
        if changed:
            diff[comp] = changed
    return diff


def trace_to_json(trace: Trace, semantics: Semantics) -> dict:
    labels = annotate(trace, semantics)
    states = [state_to_json(s) for s in trace]
    steps = []
    for i, lbl in enumerate(labels):
        steps.append({"action": lbl, "state": state_label(trace[i + 1]),
                      "delta": _delta(states[i], states[i + 1])})
    return {"format": FORMAT_VERSION, "initial": {"state": state_label(trace[0]), **states[0]},
            "steps": steps}


def render_trace(trace: Trace, semantics: Semantics, style: str = "text"):
    if style == "json":
        return trace_to_json(trace, semantics)
    if style != "text":
        raise ValueError(f"unknown style {style!r}")
    return "\n".join(annotate(trace, semantics))


def replay(start: Infrastructure, labels, semantics: Semantics) -> Trace | None:
    """Follow action labels from ``start``; None when a step is not enabled."""
    states = [start]
    for lbl in labels:
        nxt = [s for l, s in semantics.labeled_successors(states[-1]) if l == lbl]
        if not nxt:
            return None
        states.append(nxt[0])
    return Trace(tuple(states))


def attack_tree_json(tree) -> dict:
    return {"format": FORMAT_VERSION, "tree": tree_to_json(tree, state_label)}


def refinement_to_json(v) -> dict:
    return {
        "holds": v.holds,
        "clause": v.clause,
        "witness_concrete_state": None if v.concrete_state is None else state_label(v.concrete_state),
        "witness_abstract_state": None if v.abstract_state is None else state_label(v.abstract_state),
    }


# ---------------------------------------------------------------- manifests

@dataclass(frozen=True)
class ChainStep:
    scenario: Scenario
    level: Level
    map: str  # abstraction from this step to the previous one
    path: str


_MAPS = ("identity", "refmap")


def load_manifest(path) -> tuple[list[ChainStep], str]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(raw, dict) or not isinstance(raw.get("steps"), list) or not raw["steps"]:
        _fail("manifest needs a nonempty 'steps' list")
    policy = raw.get("policy", "global")
    if policy != "global":
        _fail(f"unknown policy {policy!r}")
    steps = []
    for i, st in enumerate(raw["steps"]):
        if not isinstance(st, dict) or "scenario" not in st:
            _fail(f"manifest step {i} needs a 'scenario' path")
        if set(st) - {"scenario", "map", "level"}:
            _fail(f"manifest step {i} has an unknown field")
        scen_path = (path.parent / st["scenario"]).resolve()
        try:
            scen = load_scenario_file(scen_path)
        except OSError as exc:
            raise ScenarioError(f"manifest step {i}: {exc}") from None
        level = Level(st.get("level", scen.level))
        mp = st.get("map", "identity")
        if mp not in _MAPS:
            _fail(f"manifest step {i} names unknown map {mp!r}")
        steps.append(ChainStep(scen, level, mp, str(st["scenario"])))
    return steps, policy
