from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provql.importer import EntityRecord, ImportFailed, ParseError, import_file, import_lines, parse_log_line
from provql.model import EntityKey, Kind, OpType, RawEvent
from provql.store import MemoryStore

from conftest import random_store

EVENT = ('{"type":"event","id":1,"op":"write","src":{"kind":"process","host":"1","pid":42,"name":"bash"},'
         '"dst":{"kind":"file","host":"1","path":"/tmp/x"},"start":100,"end":110,"amount":64}')
NET = ('{"type":"entity","kind":"network","host":"2","src_ip":"192.168.1.128","src_port":4444,'
       '"dst_ip":"192.168.1.131","dst_port":80}')


def test_event_line():
    rec = parse_log_line(EVENT)
    assert isinstance(rec, RawEvent)
    assert rec.src == EntityKey.process("1", 42, "bash")
    assert rec.dst == EntityKey.file("1", "/tmp/x")
    assert (rec.optype, rec.starttime, rec.endtime, rec.amount) == (OpType.WRITE, 100, 110, 64)


def test_network_entity_line():
    rec = parse_log_line(NET)
    assert isinstance(rec, EntityRecord)
    assert rec.kind is Kind.NETWORK
    assert rec.key.fields()["src_ip"] == "192.168.1.128"


@pytest.mark.parametrize("line, fragment", [
    ("not json", "bad JSON"),
    ("[1, 2]", "object"),
    ('{"type":"event","id":1,"op":"write","dst":{"kind":"file","host":"1","path":"/x"}}', "src"),
    (EVENT.replace('"write"', '"fly"'), "operation"),
    (EVENT.replace('"file"', '"socket"'), "kind"),
    ('{"type":"mystery"}', "record type"),
])
def test_bad_lines(line, fragment):
    with pytest.raises(ParseError) as info:
        parse_log_line(line, 12)
    assert info.value.line_no == 12
    assert fragment in str(info.value)


def test_import_counts_and_skips_bad_lines():
    store = MemoryStore()
    lines = [NET, EVENT, "garbage", "", EVENT]
    stats = import_lines(lines, store, batch_size=2)
    assert stats.accepted == 1
    assert stats.rejected == 1
    assert stats.duplicates == 1
    assert len(store.entities) == 3  # network + bash + /tmp/x


def test_missing_file_raises(tmp):
    with pytest.raises(ImportFailed):
        import_file(tmp / "absent.jsonl", MemoryStore())


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000), batch=st.integers(1, 500))
def test_dump_and_reimport_round_trip(seed, batch):
    src = random_store(seed, n_entities=15, n_events=120)
    lines = [json.dumps(r) for r in src.dump_records()]
    dst = MemoryStore()
    stats = import_lines(lines, dst, batch_size=batch)
    assert stats.rejected == 0 and stats.accepted == 120

    def view(store):
        return sorted(
            (e.id, store.entity(e.src).key, store.entity(e.dst).key, e.optype, e.starttime, e.endtime, e.amount)
            for e in store.all_events()
        )
    assert view(dst) == view(src)
