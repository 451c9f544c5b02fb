"""Normalized JSONL audit-log ingestion.

One JSON object per line, either an entity declaration::

    {"type": "entity", "kind": "process", "host": "1", "pid": 42, "name": "bash"}

or an event that names its endpoints by entity key::

    {"type": "event", "id": 1, "op": "write",
     "src": {"kind": "process", "host": "1", "pid": 42, "name": "bash"},
     "dst": {"kind": "file", "host": "1", "path": "/tmp/x"},
     "start": 100, "end": 110, "amount": 64}

Entities referenced only by events are created from their key fields.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

from .model import KEY_FIELDS, EntityKey, Kind, OpType, RawEvent
from .store import ImportStats, MemoryStore

log = logging.getLogger(__name__)

DEFAULT_BATCH = 10_000


class ParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class ImportFailed(RuntimeError):
    def __init__(self, message: str, stats: ImportStats):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class EntityRecord:
    key: EntityKey
    attrs: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def kind(self) -> Kind:
        return self.key.kind

    @property
    def host(self) -> str:
        return self.key.host


EventRecord = RawEvent
LogRecord = Union[EntityRecord, EventRecord]

_INT_FIELDS = {"pid", "src_port", "dst_port"}


def _entity_key(obj, line_no: int, where: str) -> tuple[EntityKey, dict]:
    if not isinstance(obj, dict):
        raise ParseError(line_no, f"{where}: expected an object")
    try:
        kind = Kind.parse(str(obj["kind"]))
    except KeyError:
        raise ParseError(line_no, f"{where}: missing field 'kind'") from None
    except ValueError as exc:
        raise ParseError(line_no, f"{where}: {exc}") from None
    if "host" not in obj:
        raise ParseError(line_no, f"{where}: missing field 'host'")
    fields = {}
    for name in KEY_FIELDS[kind]:
        if name not in obj:
            raise ParseError(line_no, f"{where}: missing field {name!r}")
        value = obj[name]
        if name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParseError(line_no, f"{where}: {name} must be an integer")
        fields[name] = value
    try:
        key = EntityKey.from_fields(kind, str(obj["host"]), fields)
    except ValueError as exc:
        raise ParseError(line_no, f"{where}: {exc}") from None
    attrs = obj.get("attrs") or {}
    if not isinstance(attrs, dict):
        raise ParseError(line_no, f"{where}: attrs must be an object")
    return key, {str(k): str(v) for k, v in attrs.items()}


def _int_field(obj: dict, name: str, line_no: int, default: Optional[int] = None) -> int:
    if name not in obj:
        if default is not None:
            return default
        raise ParseError(line_no, f"missing field {name!r}")
    value = obj[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(line_no, f"{name} must be an integer")
    return value


def parse_log_line(line: str, line_no: int = 0) -> LogRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(line_no, f"bad JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ParseError(line_no, "record must be a JSON object")
    rtype = obj.get("type")
    if rtype == "entity":
        key, attrs = _entity_key(obj, line_no, "entity")
        return EntityRecord(key, attrs)
    if rtype == "event":
        for name in ("src", "dst", "op"):
            if name not in obj:
                raise ParseError(line_no, f"missing field {name!r}")
        try:
            op = OpType.parse(str(obj["op"]))
        except ValueError as exc:
            raise ParseError(line_no, str(exc)) from None
        src, _ = _entity_key(obj["src"], line_no, "src")
        dst, _ = _entity_key(obj["dst"], line_no, "dst")
        return EventRecord(
            id=_int_field(obj, "id", line_no),
            src=src,
            dst=dst,
            optype=op,
            starttime=_int_field(obj, "start", line_no),
            endtime=_int_field(obj, "end", line_no),
            amount=_int_field(obj, "amount", line_no, default=0),
            host=str(obj.get("host", src.host)),
        )
    raise ParseError(line_no, f"unknown record type {rtype!r}")


def _flush(store: MemoryStore, entities: list, events: list) -> ImportStats:
    declared = {rec.key for rec in entities}
    implicit = []
    for ev in events:
        for key in (ev.src, ev.dst):
            if key not in declared and store.lookup(key) is None:
                declared.add(key)
                implicit.append((key, {}))
    return store.insert_batch([(r.key, r.attrs) for r in entities] + implicit, events)


def import_lines(
    lines, store: MemoryStore, batch_size: int = DEFAULT_BATCH,
    stats: Optional[ImportStats] = None,
) -> ImportStats:
    stats = ImportStats() if stats is None else stats
    entities: list = []
    events: list = []
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = parse_log_line(line, line_no)
        except ParseError as exc:
            stats.rejected += 1
            stats.reasons.append((f"line {line_no}", exc.reason))
            log.warning("%s", exc)
            continue
        (entities if isinstance(rec, EntityRecord) else events).append(rec)
        if len(entities) + len(events) >= batch_size:
            stats += _flush(store, entities, events)
            entities, events = [], []
    if entities or events:
        stats += _flush(store, entities, events)
    return stats


def import_file(path, store: MemoryStore, batch_size: int = DEFAULT_BATCH) -> ImportStats:
    """Stream ``path`` into ``store`` in batches; returns cumulative stats."""
    stats = ImportStats()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            import_lines(fh, store, batch_size, stats)
    except OSError as exc:
        raise ImportFailed(f"cannot read {path}: {exc}", stats) from exc
    if stats.duplicates:
        log.info("%d duplicate events skipped", stats.duplicates)
    return stats
