from __future__ import annotations

import csv
import io
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provql import algebra
from provql.model import Entity, EntityKey, GraphEdge, OpType, ProvGraph, fuse_edges

KEYS = [EntityKey.process("1", 100 + i, f"p{i}") for i in range(6)] + [
    EntityKey.file("1", f"/f{i}") for i in range(6)
] + [EntityKey.network("2", "192.168.1.128", 4000 + i, "192.168.1.131", 80) for i in range(3)]


def _pool():
    rng = random.Random(0)
    events = []
    for i in range(80):
        a, b = rng.sample(KEYS, 2)
        s = rng.randrange(1000)
        events.append((i, a, b, rng.choice([OpType.READ, OpType.WRITE]), s, s + rng.randrange(1, 9), rng.randrange(100)))
    return events


POOL = _pool()


def random_graph(seed: int, id_offset: int = 0) -> ProvGraph:
    """A sample of one shared event pool, as two queries over one store would return.

    Node ids are local to the graph; some same-signature events are pre-merged.
    """
    rng = random.Random(seed)
    keys = set(rng.sample(KEYS, rng.randrange(2, len(KEYS))))
    ids = {k: id_offset + i for i, k in enumerate(sorted(keys, key=EntityKey.sort_key))}
    g = ProvGraph({ids[k]: Entity(ids[k], k) for k in keys})
    chosen = [ev for ev in POOL if ev[1] in keys and ev[2] in keys and rng.random() < 0.6]
    by_sig: dict = {}
    for i, a, b, op, s, e, amt in chosen:
        by_sig.setdefault((a, b, op), []).append(GraphEdge(ids[a], ids[b], op, s, e, amt, (i,)))
    for edges in by_sig.values():
        if len(edges) > 1 and rng.random() < 0.5:
            edges = [fuse_edges(edges)]
        g.edges.extend(e.with_weight(rng.choice([None, rng.random()])) for e in edges)
    g.scores = {n: rng.random() for n in g.entities if rng.random() < 0.5}
    g.poi_node = next(iter(g.entities))
    return g


pairs = st.tuples(st.integers(0, 10**6), st.integers(0, 10**6))


@settings(max_examples=100, deadline=None)
@given(seeds=pairs)
def test_union_idempotent(seeds):
    g = random_graph(seeds[0])
    gg = algebra.union(g, g)
    assert gg.signatures() == g.signatures()
    assert sorted(e.raw_ids for e in gg.edges) == sorted(e.raw_ids for e in g.edges)


@settings(max_examples=100, deadline=None)
@given(seeds=pairs)
def test_union_commutative(seeds):
    a, b = random_graph(seeds[0]), random_graph(seeds[1], id_offset=500)
    ab, ba = algebra.union(a, b), algebra.union(b, a)
    assert ab.signatures() == ba.signatures() == a.signatures() | b.signatures()
    assert sorted(sorted(e.raw_ids) for e in ab.edges) == sorted(sorted(e.raw_ids) for e in ba.edges)
    assert ab.raw_event_ids() == a.raw_event_ids() | b.raw_event_ids()


@settings(max_examples=100, deadline=None)
@given(seeds=pairs)
def test_intersect_contained_in_both(seeds):
    a, b = random_graph(seeds[0]), random_graph(seeds[1], id_offset=500)
    i = algebra.intersect(a, b)
    assert i.signatures() == a.signatures() & b.signatures()
    assert i.signatures() <= algebra.union(a, b).signatures()
    assert i.raw_event_ids() <= a.raw_event_ids()
    assert not i.check()


def test_union_fuses_shared_signature():
    p, f = KEYS[0], KEYS[6]
    a = ProvGraph({1: Entity(1, p), 2: Entity(2, f)}, [GraphEdge(1, 2, OpType.WRITE, 10, 20, 5, (7,), 0.2)])
    b = ProvGraph({9: Entity(9, f), 8: Entity(8, p)}, [GraphEdge(8, 9, OpType.WRITE, 15, 40, 3, (8,), 0.6)])
    u = algebra.union(a, b)
    assert len(u.edges) == 1
    e = u.edges[0]
    assert (e.starttime, e.endtime, e.amount, sorted(e.raw_ids), e.weight) == (10, 40, 8, [7, 8], 0.6)


def test_combine_rejects_unknown():
    with pytest.raises(ValueError):
        algebra.combine("xor", ProvGraph(), ProvGraph())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_json_round_trip(seed):
    g = random_graph(seed)
    again = algebra.from_json(algebra.to_json(g))
    assert algebra.graphs_equal(g, again)
    assert algebra.export(g, "json") == algebra.export(again, "json")


def test_exports_are_deterministic_and_well_formed():
    g = random_graph(42)
    for fmt in ("dot", "json", "csv"):
        assert algebra.export(g, fmt) == algebra.export(g.copy(), fmt)
    rows = list(csv.reader(io.StringIO(algebra.export(g, "csv").decode())))
    assert rows[0] == algebra.CSV_HEADER and len(rows) == len(g.edges) + 1
    dot = algebra.export(g, "dot").decode()
    edge_lines = [ln for ln in dot.splitlines() if ln.strip().startswith("n") and " -> n" in ln]
    assert dot.startswith("digraph") and len(edge_lines) == len(g.edges)
    obj = json.loads(algebra.export(g, "json"))
    assert len(obj["nodes"]) == len(g.entities)
    with pytest.raises(ValueError):
        algebra.export(g, "xml")


def test_dot_escapes_quotes():
    k = EntityKey.file("1", '/tmp/a"b')
    g = ProvGraph({1: Entity(1, k), 2: Entity(2, KEYS[0])}, [GraphEdge(2, 1, OpType.WRITE, 0, 1, 1, (1,))])
    assert '\\"' in algebra.to_dot(g)
