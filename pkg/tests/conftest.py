from __future__ import annotations

from pathlib import Path

import pytest

from riskref.corona import GlobalPolicyHolds, build_kripke, scorona_set
from riskref.scenario import initial_infrastructure, load_scenario_file, semantics_for

DATA = Path(__file__).resolve().parents[1] / "src" / "riskref" / "data"
EXAMPLE = DATA / "cwa_example.json"
SMALL = DATA / "cwa_small.json"


@pytest.fixture(scope="session")
def example():
    return load_scenario_file(EXAMPLE)


@pytest.fixture(scope="session")
def small():
    return load_scenario_file(SMALL)


class _Closures:
    """Session cache of CWA closures, built with the default attacker-only semantics."""

    def __init__(self, scenario):
        self.scenario = scenario
        self._cache = {}

    def __getitem__(self, level):
        if level not in self._cache:
            self._cache[level] = build_kripke(self.scenario, level, knowledge="attacker-only")
        return self._cache[level]

    def semantics(self, level):
        return semantics_for(self.scenario, level)

    def init(self, level):
        return initial_infrastructure(self.scenario, level)

    @property
    def bad(self):
        return scorona_set(self.scenario.efid_universe, self.scenario.attacker)

    @property
    def safe(self):
        return GlobalPolicyHolds(self.scenario.attacker, self.scenario.efid_universe)


@pytest.fixture(scope="session")
def example_k(example):
    return _Closures(example)


@pytest.fixture(scope="session")
def small_k(small):
    return _Closures(small)
