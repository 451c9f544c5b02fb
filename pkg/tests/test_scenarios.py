from __future__ import annotations

import pytest

from provql import scenarios
from provql.config import Config
from provql.engine import execute
from provql.lang import parse_query, validate_ast


@pytest.mark.parametrize("name", scenarios.SCENARIOS)
def test_generation_is_deterministic(name):
    a = scenarios.generate(name, 800, 3)
    b = scenarios.generate(name, 800, 3)
    assert a.lines() == b.lines() and a.manifest == b.manifest
    assert scenarios.generate(name, 800, 4).lines() != a.lines()


@pytest.mark.parametrize("name", scenarios.SCENARIOS)
def test_manifest_is_consistent(name):
    sc = scenarios.generate(name, 800, 0)
    ids = {r["id"] for r in sc.records if r["type"] == "event"}
    m = sc.manifest
    assert m["events"] == len(ids)
    assert set(m["critical_events"]) <= ids
    assert set(m["critical_by_host"]["1"]) | set(m["critical_by_host"]["2"]) == set(m["critical_events"])
    assert scenarios.ANCHOR_A in ids and scenarios.ANCHOR_B in ids
    assert validate_ast(parse_query(sc.query)) == []
    assert validate_ast(parse_query(sc.weight_query)) == []


def test_small_investigation_recovers_attack():
    sc = scenarios.generate("password_crack", 2000, 0)
    store = scenarios.load(sc)
    res = execute(parse_query(sc.query), store, Config())
    assert sc.critical_ids <= res.graph.raw_event_ids()
    kinds = [s.kind for s in res.report.stages]
    for k in ("poi", "backward_bfs", "merge", "weights", "propagate", "entries", "forward_bfs", "intersect", "union"):
        assert k in kinds
    # scores are probabilities of the backward walk, so entry scores lie in [0, 1]
    assert all(0.0 <= v <= 1.0 + 1e-12 for v in res.graph.scores.values())
    assert not res.graph.check()


def test_write_scenario(tmp):
    sc = scenarios.generate("vpn_filter", 300, 0)
    paths = scenarios.write_scenario(sc, tmp)
    assert paths["log"].read_text().count("\n") == len(sc.records)
    assert paths["query"].read_text() == sc.query
