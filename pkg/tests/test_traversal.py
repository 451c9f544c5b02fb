from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provql.config import Config
from provql.engine import (
    AmbiguousPOI, ExecutionError, Limits, POINotFound, backward_search, execute, forward_search,
    plan_traversal, traverse,
)
from provql.lang import parse_query
from provql.model import EntityKey, RawEvent
from provql.store import FileStore, MemoryStore, save_store

from conftest import (
    BACKWARD_SPEC, BACKWARD_TEXT, FORWARD_SPEC, FORWARD_TEXT, _stage, backward_oracle, forward_oracle,
    poi_for, random_store,
)

DFS_BACKWARD = _stage(BACKWARD_TEXT.replace("BFS", "DFS"), "Traverse").spec
DFS_FORWARD = _stage(FORWARD_TEXT.replace("BFS", "DFS"), "Traverse").spec


def _raw(g):
    return {i for e in g.edges for i in e.raw_ids}


def _case(seed):
    rng = random.Random(seed)
    store = random_store(seed, n_entities=rng.randrange(5, 100), n_events=rng.randrange(20, 1000))
    poi = poi_for(store, rng.randrange(1, len(store) + 1))
    entries = sorted(rng.sample(sorted(store.entities), 3))
    return store, poi, entries


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_backward_equals_fixpoint(seed):
    store, poi, _ = _case(seed)
    g = backward_search(store, poi, BACKWARD_SPEC)
    assert _raw(g) == backward_oracle(list(store.all_events()), poi.event)
    assert g.poi_node == poi.event.dst


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_forward_equals_fixpoint(seed):
    store, _, entries = _case(seed)
    g = forward_search(store, entries, FORWARD_SPEC)
    assert _raw(g) == forward_oracle(list(store.all_events()), set(entries))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_depth_first_reaches_the_same_closure(seed):
    store, poi, entries = _case(seed)
    assert _raw(backward_search(store, poi, DFS_BACKWARD)) == _raw(backward_search(store, poi, BACKWARD_SPEC))
    assert _raw(forward_search(store, entries, DFS_FORWARD)) == _raw(forward_search(store, entries, FORWARD_SPEC))


def _degree_sum(store, nodes):
    return sum(len(list(store.incoming(n))) + len(list(store.outgoing(n))) for n in nodes)


@pytest.mark.parametrize("seed", range(10))
def test_fetches_bounded_by_discovered_degree(seed):
    store, poi, entries = _case(seed)
    for run in (
        lambda: traverse(store, plan_traversal(BACKWARD_SPEC), [poi.event.dst], poi.bindings(), Limits(), poi.event),
        lambda: traverse(store, plan_traversal(FORWARD_SPEC), entries, {}, Limits()),
    ):
        store.reset_fetch_count()
        g, stats = run()
        fetched = store.fetch_count()
        assert fetched == stats.fetched
        assert fetched <= _degree_sum(store, g.entities)


def test_file_store_traversal_matches(tmp):
    store, poi, entries = _case(11)
    save_store(store, tmp / "s")
    with FileStore(tmp / "s") as fs:
        assert _raw(backward_search(fs, poi, BACKWARD_SPEC)) == _raw(backward_search(store, poi, BACKWARD_SPEC))
        assert _raw(forward_search(fs, entries, FORWARD_SPEC)) == _raw(forward_search(store, entries, FORWARD_SPEC))


def test_edge_limit_truncates():
    store, poi, _ = _case(4)
    full = backward_search(store, poi, BACKWARD_SPEC)
    if len(full.edges) < 4:
        pytest.skip("closure too small for this seed")
    part = backward_search(store, poi, BACKWARD_SPEC, Limits(max_edges=3))
    assert part.truncated and len(part.edges) <= 3
    assert _raw(part) <= _raw(full)


# --- whole queries on a hand-built log ------------------------------------------------


def _chain_store():
    """attacker -> sh -> tar reads /etc/shadow, writes the archive; vim touches unrelated files."""
    k = {
        "net": EntityKey.network("1", "10.0.0.9", 4444, "192.168.1.131", 22),
        "sh": EntityKey.process("1", 10, "bash"),
        "tar": EntityKey.process("1", 11, "tar"),
        "shadow": EntityKey.file("1", "/etc/shadow"),
        "arc": EntityKey.file("1", "/tmp/passwords.tar.bz2"),
        "vim": EntityKey.process("1", 12, "vim"),
        "notes": EntityKey.file("1", "/home/u/notes"),
    }
    ev = [
        RawEvent(1, k["net"], k["sh"], "recvmsg", 1, 2, 500),
        RawEvent(2, k["sh"], k["tar"], "clone", 3, 4, 0),
        RawEvent(3, k["shadow"], k["tar"], "read", 5, 6, 500),
        RawEvent(15035, k["tar"], k["arc"], "write", 10, 11, 500),
        RawEvent(5, k["notes"], k["vim"], "read", 1, 2, 10),
        RawEvent(6, k["vim"], k["notes"], "write", 3, 4, 10),
        RawEvent(7, k["tar"], k["notes"], "write", 30, 31, 3),   # after the POI
        RawEvent(8, k["shadow"], k["tar"], "read", 40, 41, 9),   # after the POI
    ]
    store = MemoryStore()
    store.insert_batch([(v, {}) for v in k.values()], ev)
    return store


STEP = """MATCH (p:Process)-[st:FileEvent{optype:"write"}]->(f:File{name:"/tmp/passwords.tar.bz2"})
BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1
RETURN g1"""


def test_query_backward_result():
    res = execute(parse_query(STEP), _chain_store(), Config())
    assert _raw(res.graph) == {1, 2, 3, 15035}
    assert res.report.backward_edges == 4
    assert [s.kind for s in res.report.stages][:2] == ["poi", "backward_bfs"]


def test_poi_errors():
    store = _chain_store()
    with pytest.raises(POINotFound):
        execute(parse_query(STEP.replace("passwords", "nothing")), store)
    with pytest.raises(AmbiguousPOI):
        execute(parse_query(STEP.replace('{name:"/tmp/passwords.tar.bz2"}', "")), store)


def test_invalid_query_rejected_by_engine():
    bad = parse_query(STEP.replace("RETURN g1", "RETURN nope"))
    with pytest.raises(ExecutionError):
        execute(bad, _chain_store())
