"""Command-line entry point for the refinement-risk workflow.

Exit codes: 0 the policy or refinement holds, 2 an attack or refutation was
found, 1 the run failed (bad input, resource bound, undecidable verdict).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field

from .attack_tree import correctness_check_on_the_fly, is_valid_attack, render_tree, synthesize_attack
from .corona import (
    GlobalPolicyHolds,
    Level,
    anonymous_actor,
    identified_efids,
    refmap,
    release_shared,
    scorona_set,
    state_label,
)
from .kripke import StateLimitExceeded, TransitionSystem, reachability_closure, resolve_max_states, search
from .refinement import (
    IDENTITY,
    AbstractionMap,
    check_refinement,
    check_rr_cycle,
    compose_maps,
    one_step_witness,
)
from .scenario import (
    FORMAT_VERSION,
    ScenarioError,
    attack_tree_json,
    initial_infrastructure,
    load_manifest,
    load_scenario_file,
    refinement_to_json,
    render_trace,
    semantics_for,
)

log = logging.getLogger("riskref")

EXIT_HOLDS, EXIT_ERROR, EXIT_FOUND = 0, 1, 2
REFMAP = AbstractionMap(refmap, "refmap")


@dataclass
class RunReport:
    command: str
    verdict: str  # "holds" | "fails" | "error"
    state_count: int | None = None
    details: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    lines: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return {"holds": EXIT_HOLDS, "fails": EXIT_FOUND}.get(self.verdict, EXIT_ERROR)

    def to_json(self, with_timings: bool = False) -> dict:
        out = {"format": FORMAT_VERSION, "command": self.command, "verdict": self.verdict,
               "state_count": self.state_count, **self.details, "witnesses": self.witnesses}
        if with_timings:
            out["timings"] = {k: round(v, 6) for k, v in self.timings.items()}
        return out


class _Clock:
    def __init__(self, report: RunReport):
        self.report = report

    def __call__(self, phase: str):
        report = self.report

        class _Phase:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                report.timings[phase] = report.timings.get(phase, 0.0) + time.perf_counter() - self.t0

        return _Phase()


def _options(args) -> dict:
    return {
        "knowledge": args.knowledge,
        "standalone_put": not args.no_standalone_put,
        "moves_require_edge": True if args.moves_require_edge else None,
        "saturate": args.efid_exhaustion == "saturate",
    }


def _bound(args, scenario) -> int:
    if args.max_states is not None:
        return args.max_states
    return resolve_max_states(scenario.max_states)


def _owner_note(init, efids) -> str:
    names = []
    for e in sorted(efids):
        try:
            names.append(f"Efid {e} ({anonymous_actor(init, e)})")
        except LookupError:
            names.append(f"Efid {e}")
    return ", ".join(names)


def _attack_search(args, command: str, target: str) -> RunReport:
    report = RunReport(command, "error")
    clock = _Clock(report)
    scenario = load_scenario_file(args.scenario)
    level = scenario.level if args.level is None else Level(args.level)
    sem = semantics_for(scenario, level, **_options(args))
    init = initial_infrastructure(scenario, level)
    system = TransitionSystem(sem)
    bad = scorona_set(scenario.efid_universe, scenario.attacker)
    report.details = {"level": int(level), "attacker": scenario.attacker, "property": target}
    with clock("search"):
        result = search({init}, system, bad, max_states=_bound(args, scenario), workers=args.workers)
    report.state_count = result.explored
    report.details["depth"] = result.depth
    if not result.found:
        report.verdict = "holds"
        report.lines.append(f"level {int(level)}: AG global_policy holds; exhaustive over "
                            f"{result.explored} reachable states (depth {result.depth})")
        return report

    report.verdict = "fails"
    trace = result.trace
    tree = synthesize_attack(trace)
    with clock("validate"):
        valid = is_valid_attack(tree, system)
        verdict = correctness_check_on_the_fly(tree, {init}, system, max_states=_bound(args, scenario),
                                               workers=args.workers)
    leaked = sorted(identified_efids(trace.last, scenario.attacker) & scenario.efid_universe)
    report.witnesses = {
        "trace": render_trace(trace, sem, "json"),
        "attack_tree": attack_tree_json(tree),
        "identified_efids": leaked,
        "attack_valid": valid,
        "correctness": verdict.status,
    }
    head = "EF scorona holds" if target == "EF scorona" else "AG global_policy fails"
    report.lines.append(f"level {int(level)}: {head}; attack found after exploring "
                        f"{result.explored} states")
    report.lines.append(f"counterexample ({trace.transitions} actions):")
    report.lines.extend("  " + line for line in render_trace(trace, sem, "text").splitlines())
    report.lines.append(f"identified by {scenario.attacker}: {_owner_note(init, leaked)}")
    report.lines.append("attack tree: " + render_tree(tree, state_label))
    report.lines.append(f"attack tree valid: {valid}; correctness check: {verdict.status}")
    if verdict.status == "soundness-violation":
        report.verdict = "error"
        report.lines.append("internal error: valid attack tree without EF witness")
    return report


def cmd_check(args) -> RunReport:
    return _attack_search(args, "check", "AG global_policy")


def cmd_attack(args) -> RunReport:
    return _attack_search(args, "attack", "EF scorona")


def _map_for(name: str, abstract_level: Level, concrete_level: Level) -> AbstractionMap:
    if name == "refmap":
        if abstract_level != Level.L0 or concrete_level == Level.L0:
            raise ScenarioError("refmap maps a level 1-3 model onto a level 0 model")
        return REFMAP
    if (abstract_level == Level.L0) != (concrete_level == Level.L0):
        raise ScenarioError("identity map needs both models to share a state type "
                            "(both level 0 or both level 1-3)")
    return IDENTITY


# Closures (and bound overruns) already computed in this process, keyed by
# everything that determines them. ``main`` runs once per process, so this
# only matters to callers that drive several commands through ``run``.
_CLOSURES: dict = {}


def build_closure(scenario, level, args):
    """Reachability closure under the command-line options in ``args`` (memoised)."""
    sem = semantics_for(scenario, level, **_options(args))
    bound = _bound(args, scenario)
    key = (scenario, Level(level), sem, bound, args.workers)
    if key not in _CLOSURES:
        init = initial_infrastructure(scenario, level)
        try:
            _CLOSURES[key] = reachability_closure({init}, TransitionSystem(sem), max_states=bound,
                                                  workers=args.workers)
        except StateLimitExceeded as exc:
            # keep a bare copy: the original's traceback pins the abandoned state table
            _CLOSURES[key] = StateLimitExceeded(exc.limit, exc.depth)
            release_shared()
    hit = _CLOSURES[key]
    if isinstance(hit, StateLimitExceeded):
        raise hit
    return hit


def _closure(scenario, level, args, report, tag):
    with _Clock(report)(f"closure[{tag}]"):
        return build_closure(scenario, level, args)


def cmd_refine(args) -> RunReport:
    report = RunReport("refine", "error")
    abstract = load_scenario_file(args.abstract)
    concrete = load_scenario_file(args.concrete)
    a_level = abstract.level if args.abstract_level is None else Level(args.abstract_level)
    c_level = concrete.level if args.concrete_level is None else Level(args.concrete_level)
    E = _map_for(args.map, a_level, c_level)
    report.details = {"abstract_level": int(a_level), "concrete_level": int(c_level),
                      "map": args.map, "mode": args.mode}
    K = _closure(abstract, a_level, args, report, "abstract")
    Kc = _closure(concrete, c_level, args, report, "concrete")
    report.state_count = len(K.states) + len(Kc.states)
    report.details["abstract_states"] = len(K.states)
    report.details["concrete_states"] = len(Kc.states)
    with _Clock(report)("check"):
        if args.mode == "full":
            v = check_refinement(K, Kc, E)
        else:
            v = one_step_witness(K, Kc, E, reachable_only=args.mode == "strong-prime")
    report.verdict = "holds" if v.holds else "fails"
    report.witnesses = {"refinement": refinement_to_json(v)}
    line = (f"L{int(a_level)} ⊑_{args.map} L{int(c_level)} ({args.mode}): "
            f"{'holds' if v.holds else 'fails'} over {len(Kc.states)} concrete states")
    report.lines.append(line)
    if not v.holds:
        report.lines.append(f"failing clause: {v.clause}; concrete state {state_label(v.concrete_state)} "
                            f"maps to {state_label(v.abstract_state)}")
    return report


def _tri(value) -> str:
    return {True: "yes", False: "no", None: "undecided"}[value]


def cmd_rr_cycle(args) -> RunReport:
    report = RunReport("rr-cycle", "error")
    clock = _Clock(report)
    steps, policy = load_manifest(args.manifest)
    base = steps[0]
    report.details = {"policy": policy, "levels": [int(s.level) for s in steps]}

    closures, bound_notes = [], []
    for i, st in enumerate(steps):
        try:
            closures.append(_closure(st.scenario, st.level, args, report, str(i)))
        except StateLimitExceeded as exc:
            closures.append(None)
            bound_notes.append(f"step {i} (L{int(st.level)}): {exc}")

    maps = [IDENTITY]
    for i in range(1, len(steps)):
        maps.append(_map_for(steps[i].map, steps[i - 1].level, steps[i].level))

    rows = []
    composed = IDENTITY
    final = None
    for i, st in enumerate(steps):
        if i:
            composed = compose_maps(composed, maps[i])
        sem = semantics_for(st.scenario, st.level, **_options(args))
        init = initial_infrastructure(st.scenario, st.level)
        bad = scorona_set(st.scenario.efid_universe, st.scenario.attacker)
        with clock(f"search[{i}]"):
            hit = search({init}, TransitionSystem(sem), bad, max_states=_bound(args, st.scenario),
                         workers=args.workers)
        attack = hit.found
        row = {"step": i, "level": int(st.level), "attack": attack,
               "attack_length": hit.trace.transitions if attack else None}
        K, Kc = closures[0], closures[i]
        abstract_bad = scorona_set(base.scenario.efid_universe, base.scenario.attacker)
        step_ref = None
        if i and closures[i - 1] is not None and Kc is not None:
            with clock(f"refine[{i}]"):
                step_ref = check_refinement(closures[i - 1], Kc, maps[i])
        row["refinement"] = None if step_ref is None else step_ref.holds
        if K is not None and Kc is not None:
            with clock(f"rr[{i}]"):
                # The first step's own refinement check already is the composed one.
                v = check_rr_cycle(K, Kc, composed, bad, abstract_target=abstract_bad,
                                   refinement=step_ref if i == 1 else None)
            row.update(predicate=v.holds, vacuous=v.vacuous,
                       abstract_ef=v.abstract_ef, composed_refinement=v.refinement.holds)
            cex = v.counterexample
        elif not attack:
            # With no concrete attack the implication holds whatever the antecedent is.
            row.update(predicate=True, vacuous=False, abstract_ef=None, composed_refinement=None)
            cex = None
        else:
            row.update(predicate=None, vacuous=False, abstract_ef=None, composed_refinement=None)
            cex = None
        rows.append(row)
        final = (row, cex, sem)

    row, cex, sem = final
    report.details["iterations"] = rows
    report.details["undecided_reasons"] = bound_notes
    report.state_count = sum(len(K.states) for K in closures if K is not None)
    if row["predicate"] is None:
        report.verdict = "error"
    else:
        report.verdict = "holds" if row["predicate"] else "fails"
    if cex is not None:
        report.witnesses = {"surviving_attack": render_trace(cex, sem, "json")}

    report.lines.append(f"{'step':>4} {'level':>5} {'attack':>7} {'refines':>9} {'RR_cycle':>10}")
    for r in rows:
        ref = "-" if r["step"] == 0 else _tri(r["refinement"])
        pred = {True: "true", False: "false", None: "undecided"}[r["predicate"]]
        if r["predicate"] and r["vacuous"]:
            pred += " (vacuous)"
        report.lines.append(f"{r['step']:>4} {('L%d' % r['level']):>5} {_tri(r['attack']):>7} "
                            f"{ref:>9} {pred:>10}")
    report.lines.extend("note: " + n for n in bound_notes)
    if cex is not None:
        report.lines.append(f"surviving attack at L{row['level']}:")
        report.lines.extend("  " + l for l in render_trace(cex, sem, "text").splitlines())
    return report


def cmd_states(args) -> RunReport:
    report = RunReport("states", "error")
    scenario = load_scenario_file(args.scenario)
    level = scenario.level if args.level is None else Level(args.level)
    K = _closure(scenario, level, args, report, "closure")
    safe = GlobalPolicyHolds(scenario.attacker, scenario.efid_universe)
    report.verdict = "holds"
    report.state_count = len(K.states)
    report.details = {"level": int(level), "depth": K.depth,
                      "policy_violations": sum(1 for s in K.states if not safe(s))}
    secs = report.timings.get("closure[closure]", 0.0)
    report.lines.append(f"level {int(level)}: {len(K.states)} reachable states, "
                        f"frontier depth {K.depth}, {secs:.2f}s")
    return report


COMMANDS = {"check": cmd_check, "attack": cmd_attack, "refine": cmd_refine,
            "rr-cycle": cmd_rr_cycle, "states": cmd_states}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--workers", type=int, default=1, help="processes for frontier expansion")
    common.add_argument("--max-states", type=int, default=None,
                        help="state bound (default: scenario bounds, then $RISKREF_MAX_STATES, then 10^7)")
    common.add_argument("--knowledge", choices=("attacker-only", "all"), default="attacker-only",
                        help="which actors may perform get (default: attacker-only)")
    common.add_argument("--no-standalone-put", action="store_true",
                        help="at levels 2-3, rotate ids only through moves")
    common.add_argument("--moves-require-edge", action="store_true",
                        help="only move along declared edges")
    common.add_argument("--efid-exhaustion", choices=("wrap", "saturate"), default="wrap",
                        help="what a rotation past the last list entry does")
    common.add_argument("--timings", action="store_true", help="include wall-clock timings in JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="riskref", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("check", "check AG of the global policy"),
                           ("attack", "search for a deanonymisation attack (EF scorona)"),
                           ("states", "count reachable states")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("scenario")
        p.add_argument("--level", type=int, choices=range(4), default=None)

    p = sub.add_parser("refine", parents=[common], help="check a refinement between two models")
    p.add_argument("abstract")
    p.add_argument("concrete")
    p.add_argument("--map", choices=("refmap", "identity"), default="identity")
    p.add_argument("--mode", choices=("full", "strong", "strong-prime"), default="full")
    p.add_argument("--abstract-level", type=int, choices=range(4), default=None)
    p.add_argument("--concrete-level", type=int, choices=range(4), default=None)

    p = sub.add_parser("rr-cycle", parents=[common], help="evaluate the RR-cycle termination predicate")
    p.add_argument("manifest")
    return parser


def run(argv=None) -> tuple[RunReport, argparse.Namespace]:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = COMMANDS[args.command](args)
    except (ScenarioError, OSError, StateLimitExceeded, LookupError) as exc:
        report = RunReport(args.command, "error", details={"error": str(exc)})
        report.lines.append(f"error: {exc}")
    return report, args


def main(argv=None) -> int:
    report, args = run(argv)
    if args.json:
        print(json.dumps(report.to_json(args.timings), indent=2, sort_keys=True, ensure_ascii=False))
    else:
        stream = sys.stderr if report.verdict == "error" else sys.stdout
        print("\n".join(report.lines), file=stream)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
