from __future__ import annotations

import random
from pathlib import Path

import pytest

from provql.engine import POI
from provql.lang import parse_query
from provql.model import EntityKey, RawEvent
from provql.store import MemoryStore

BACKWARD_TEXT = """MATCH (p:Process)-[st]->(f:File)
BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime<max(collect(vout IN out(v) | vout.endtime))) YIELD g1
RETURN g1"""

FORWARD_TEXT = """MATCH (p:Process)-[st]->(f:File)
WITH entry = (MATCH n in nodes(f) WHERE count(in(n))=0 ORDER BY n.rel DESC LIMIT 3)
BFS (re IN forward(entry) | MATCH u=src(re) WHERE re.endtime>min(collect(uin IN in(u) | uin.starttime))) YIELD g2
RETURN g2"""


def _stage(text, cls_name):
    q = parse_query(text).sub_queries[0]
    return next(s for s in q.stages if type(s).__name__ == cls_name)


BACKWARD_SPEC = _stage(BACKWARD_TEXT, "Traverse").spec
# reduce(sum = 0, o IN out(u) | sum + o.weight * dst(o).rel)
WEIGHTED_SUM = _stage(
    "MATCH (p)-[st]->(f) BFS (r IN backward(f) | MATCH v=dst(r)) YIELD g1 UNWIND g1 AS e "
    "MATCH u=src(e) SET u.rel=reduce(sum = 0, o IN out(u) | sum+o.weight*dst(o).rel) RETURN g1",
    "SetRel",
).reduce
FORWARD_SPEC = _stage(FORWARD_TEXT, "Traverse").spec


def random_keys(rng: random.Random, n: int) -> list:
    keys = []
    for i in range(n):
        if rng.random() < 0.5:
            keys.append(EntityKey.process("1", 1000 + i, f"p{i}"))
        else:
            keys.append(EntityKey.file("1", f"/data/f{i}"))
    return keys


def random_events(rng: random.Random, keys: list, n_events: int, horizon: int = 1000) -> list:
    events = []
    for i in range(1, n_events + 1):
        a, b = rng.sample(range(len(keys)), 2)
        start = rng.randrange(horizon)
        end = start + rng.randrange(50)
        events.append(RawEvent(i, keys[a], keys[b], rng.choice(["read", "write"]),
                               start, end, rng.randrange(1, 5000), "1"))
    return events


def random_store(seed: int, n_entities: int = 60, n_events: int = 400) -> MemoryStore:
    rng = random.Random(seed)
    keys = random_keys(rng, n_entities)
    store = MemoryStore()
    stats = store.insert_batch([(k, {}) for k in keys], random_events(rng, keys, n_events))
    assert stats.rejected == 0
    return store


def poi_for(store, event_id: int) -> POI:
    return POI(store.event(event_id), "st", "p", "f")


def backward_oracle(events: list, poi) -> set:
    """Brute-force dependency closure: keep e into v when a kept e2 out of v has ts(e) < te(e2)."""
    kept = {poi.id: poi}
    changed = True
    while changed:
        changed = False
        for e in events:
            if e.id in kept:
                continue
            outs = [k for k in kept.values() if k.src == e.dst]
            if e.dst == poi.dst:
                outs.append(poi)
            if any(e.starttime < o.endtime for o in outs):
                kept[e.id] = e
                changed = True
    return set(kept)


def forward_oracle(events: list, entries: set) -> set:
    """Brute-force forward closure: entries admit every out-edge, other nodes need an earlier-starting in-edge."""
    kept: dict = {}
    changed = True
    while changed:
        changed = False
        for e in events:
            if e.id in kept:
                continue
            ins = [k for k in kept.values() if k.dst == e.src]
            if e.src in entries or any(i.starttime < e.endtime for i in ins):
                kept[e.id] = e
                changed = True
    return set(kept)


@pytest.fixture
def tmp(tmp_path: Path) -> Path:
    return tmp_path
