"""Adjacency-indexed event storage.

Two variants share one read interface: :class:`MemoryStore` keeps its indexes in
Python lists, :class:`FileStore` reads fixed-width records from disk through
``mmap`` and only keeps a per-node offset directory in memory.  Traversals ask
for the incoming or outgoing events of one node at a time, filtered by a
:data:`TimePredicate` that is resolved with a binary search on the index order.
"""

from __future__ import annotations

import bisect
import ipaddress
import json
import logging
import mmap
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .model import (
    Entity,
    EntityKey,
    Event,
    Kind,
    OpType,
    RawEvent,
    default_attrs,
    validate_event,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StartBefore:
    t: int


@dataclass(frozen=True)
class EndAfter:
    t: int


@dataclass(frozen=True)
class Window:
    """Key range on the index order between two bounds.

    On ``incoming`` it selects ``t1 <= starttime < t2`` (``StartBefore(t2)``
    minus ``StartBefore(t1)``); on ``outgoing`` it selects
    ``t1 < endtime <= t2`` (``EndAfter(t1)`` minus ``EndAfter(t2)``).  The
    traversal uses it to fetch only the slice a relaxed bound newly admits.
    """

    t1: int
    t2: int

    def __post_init__(self):
        if self.t1 > self.t2:
            raise ValueError(f"window bounds inverted: {self.t1} > {self.t2}")


@dataclass(frozen=True)
class All:
    pass


ALL = All()
TimePredicate = Union[StartBefore, EndAfter, Window, All]


def incoming_matches(e: Event, p: TimePredicate) -> bool:
    if isinstance(p, StartBefore):
        return e.starttime < p.t
    if isinstance(p, EndAfter):
        return e.endtime > p.t
    if isinstance(p, Window):
        return p.t1 <= e.starttime < p.t2
    return True


def outgoing_matches(e: Event, p: TimePredicate) -> bool:
    if isinstance(p, Window):
        return p.t1 < e.endtime <= p.t2
    return incoming_matches(e, p)


# --- entity patterns --------------------------------------------------------

_ATTR_ALIASES = {
    "hostid": "host_id",
    "host": "host_id",
    "srcip": "src_ip",
    "dstip": "dst_ip",
    "srcport": "src_port",
    "dstport": "dst_port",
    "name": "name",
    "path": "path",
    "pid": "pid",
    "id": "id",
}
INDEXED_ATTRS = ("name", "path", "pid", "src_ip", "src_port", "dst_ip", "dst_port", "host_id")
_IP_ATTRS = ("src_ip", "dst_ip")


def canonical_attr(name: str) -> str:
    return _ATTR_ALIASES.get(name.replace("_", "").lower(), name)


def _value_matches(attr: str, want, have: Optional[str]) -> bool:
    if have is None:
        return False
    want = str(want)
    if attr in _IP_ATTRS and "/" in want:
        try:
            return ipaddress.ip_address(have.split("/")[0]) in ipaddress.ip_network(
                want, strict=False
            )
        except ValueError:
            return want == have
    return want == have


def entity_matches(entity: Entity, kind: Optional[Kind], attrs: dict) -> bool:
    if kind is not None and entity.kind is not kind:
        return False
    for name, want in attrs.items():
        attr = canonical_attr(name)
        if attr == "id":
            if int(want) != entity.id:
                return False
        elif attr == "name" and entity.kind is Kind.FILE:
            if not (_value_matches(attr, want, entity.attr("name"))
                    or _value_matches(attr, want, entity.attr("path"))):
                return False
        elif not _value_matches(attr, want, entity.attr(attr)):
            return False
    return True


EVENT_CATEGORIES = {"fileevent": Kind.FILE, "networkevent": Kind.NETWORK, "processevent": Kind.PROCESS}


@dataclass
class EventPattern:
    """Fields an event must match; ``None`` or empty means unconstrained."""

    event_id: Optional[int] = None
    optype: Optional[OpType] = None
    category: Optional[str] = None
    host: Optional[str] = None
    src_kind: Optional[Kind] = None
    dst_kind: Optional[Kind] = None
    src_attrs: dict = field(default_factory=dict)
    dst_attrs: dict = field(default_factory=dict)


@dataclass
class ImportStats:
    accepted: int = 0
    rejected: int = 0
    merged_entities: int = 0
    new_entities: int = 0
    duplicates: int = 0
    reasons: list = field(default_factory=list)

    def __iadd__(self, other: "ImportStats") -> "ImportStats":
        self.accepted += other.accepted
        self.rejected += other.rejected
        self.merged_entities += other.merged_entities
        self.new_entities += other.new_entities
        self.duplicates += other.duplicates
        self.reasons.extend(other.reasons)
        return self

    def summary(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "duplicates": self.duplicates,
            "new_entities": self.new_entities,
            "merged_entities": self.merged_entities,
        }


class StoreError(RuntimeError):
    pass


class EventStore:
    """Entity tables plus the pattern lookups both store variants share."""

    def __init__(self):
        self.entities: dict[int, Entity] = {}
        self.key_to_id: dict[EntityKey, int] = {}
        self._attr_index: dict[tuple, set] = {}
        self._fetched = 0

    # -- entities

    def _index_entity(self, entity: Entity) -> None:
        self.entities[entity.id] = entity
        self.key_to_id[entity.key] = entity.id
        for attr in INDEXED_ATTRS:
            value = entity.attrs.get(attr)
            if value is not None:
                self._attr_index.setdefault((entity.kind, attr, value), set()).add(entity.id)

    def entity(self, node: int) -> Entity:
        return self.entities[node]

    def lookup(self, key: EntityKey) -> Optional[int]:
        return self.key_to_id.get(key)

    def find_entities(self, kind: Optional[Kind], attrs: dict) -> list[int]:
        candidates = None
        kinds = [kind] if kind is not None else list(Kind)
        for name, want in attrs.items():
            attr = canonical_attr(name)
            if attr not in INDEXED_ATTRS or (attr in _IP_ATTRS and "/" in str(want)):
                continue
            if attr == "name":
                continue  # file names also match on path; filtered below
            hits = set()
            for k in kinds:
                hits |= self._attr_index.get((k, attr, str(want)), set())
            candidates = hits if candidates is None else candidates & hits
        pool = self.entities if candidates is None else candidates
        return sorted(
            n for n in pool if entity_matches(self.entities[n], kind, attrs)
        )

    # -- counters

    def fetch_count(self) -> int:
        return self._fetched

    def reset_fetch_count(self) -> None:
        self._fetched = 0

    def _counted(self, events: Iterable[Event]) -> Iterator[Event]:
        for e in events:
            self._fetched += 1
            yield e

    # -- reads implemented by the variants

    def _incoming(self, v: int, p: TimePredicate) -> Iterator[Event]:
        raise NotImplementedError

    def _outgoing(self, u: int, p: TimePredicate) -> Iterator[Event]:
        raise NotImplementedError

    def _event_by_id(self, event_id: int) -> Optional[Event]:
        raise NotImplementedError

    def _scan(self) -> Iterator[Event]:
        raise NotImplementedError

    def __len__(self) -> int:
        raise NotImplementedError

    def incoming(self, v: int, p: TimePredicate = ALL) -> Iterator[Event]:
        """Events with ``dst == v`` satisfying ``p``, ascending by starttime."""
        return self._counted(self._incoming(v, p))

    def outgoing(self, u: int, p: TimePredicate = ALL) -> Iterator[Event]:
        """Events with ``src == u`` satisfying ``p``, descending by endtime."""
        return self._counted(self._outgoing(u, p))

    def event(self, event_id: int) -> Optional[Event]:
        return self._event_by_id(event_id)

    def all_events(self) -> Iterator[Event]:
        """Full scan in index order; not counted, meant for audits and dumps."""
        return self._scan()

    def find_events(self, pattern: EventPattern) -> list[Event]:
        if pattern.event_id is not None:
            e = self._event_by_id(pattern.event_id)
            pool = [] if e is None else [e]
        elif pattern.dst_attrs:
            pool = []
            for v in self.find_entities(pattern.dst_kind, pattern.dst_attrs):
                pool.extend(self._incoming(v, ALL))
        elif pattern.src_attrs:
            pool = []
            for u in self.find_entities(pattern.src_kind, pattern.src_attrs):
                pool.extend(self._outgoing(u, ALL))
        else:
            pool = self._scan()
        hits = sorted((e for e in pool if self._event_matches(e, pattern)), key=lambda e: e.id)
        self._fetched += len(hits)
        return hits

    def _event_matches(self, e: Event, pat: EventPattern) -> bool:
        if pat.event_id is not None and e.id != pat.event_id:
            return False
        if pat.optype is not None and e.optype is not pat.optype:
            return False
        if pat.host is not None and e.host != str(pat.host):
            return False
        src, dst = self.entities[e.src], self.entities[e.dst]
        if pat.category is not None:
            want = EVENT_CATEGORIES.get(pat.category.lower())
            if want is None:
                raise StoreError(f"unknown event label {pat.category!r}")
            kinds = {src.kind, dst.kind}
            if want is Kind.PROCESS:
                if kinds != {Kind.PROCESS}:
                    return False
            elif want not in kinds:
                return False
        if not entity_matches(src, pat.src_kind, pat.src_attrs):
            return False
        return entity_matches(dst, pat.dst_kind, pat.dst_attrs)

    # -- audit and export

    def audit(self) -> list[str]:
        """Full-scan check of the index invariants; returns the violations found."""
        problems = []
        by_dst: dict = {}
        by_src: dict = {}
        for e in self._scan():
            by_dst.setdefault(e.dst, []).append(e)
            by_src.setdefault(e.src, []).append(e)
        for node in self.entities:
            inc = list(self._incoming(node, ALL))
            out = list(self._outgoing(node, ALL))
            if sorted(x.id for x in inc) != sorted(x.id for x in by_dst.get(node, [])):
                problems.append(f"in_index({node}) mismatch")
            if sorted(x.id for x in out) != sorted(x.id for x in by_src.get(node, [])):
                problems.append(f"out_index({node}) mismatch")
            if [x.starttime for x in inc] != sorted(x.starttime for x in inc):
                problems.append(f"in_index({node}) not ascending by starttime")
            if [x.endtime for x in out] != sorted((x.endtime for x in out), reverse=True):
                problems.append(f"out_index({node}) not descending by endtime")
        for key, node in self.key_to_id.items():
            if self.entities[node].key != key:
                problems.append(f"key table broken at {node}")
        return problems

    def dump_records(self) -> Iterator[dict]:
        """Entities then events as importer-format JSON records."""
        for node in sorted(self.entities):
            ent = self.entities[node]
            rec = {"type": "entity", **ent.key.as_json()}
            extra = {k: v for k, v in ent.attrs.items() if default_attrs(ent.key).get(k) != v}
            if extra:
                rec["attrs"] = extra
            yield rec
        for e in sorted(self._scan(), key=lambda e: e.id):
            yield {
                "type": "event",
                "id": e.id,
                "op": e.optype.value,
                "src": self.entities[e.src].key.as_json(),
                "dst": self.entities[e.dst].key.as_json(),
                "start": e.starttime,
                "end": e.endtime,
                "amount": e.amount,
                "host": e.host,
            }


EntityInput = Union[Entity, tuple]


class MemoryStore(EventStore):
    """Memory-resident store; the only variant that accepts writes."""

    def __init__(self):
        super().__init__()
        self.events: dict[int, Event] = {}
        self._in: dict[int, list] = {}
        self._in_keys: dict[int, list] = {}
        self._out: dict[int, list] = {}
        self._out_keys: dict[int, list] = {}
        self._next_entity = 1

    def __len__(self) -> int:
        return len(self.events)

    def insert_batch(
        self, entities: Iterable[EntityInput] = (), events: Iterable[Union[Event, RawEvent]] = ()
    ) -> ImportStats:
        """Validate and index one batch; either the whole batch commits or nothing does.

        ``entities`` holds ``(EntityKey, attrs)`` pairs (or Entity records whose
        ids are ignored).  Events may name endpoints by key or by store id.
        """
        stats = ImportStats()
        new_entities: dict[EntityKey, Entity] = {}
        next_id = self._next_entity
        for item in entities:
            key, attrs = (item.key, item.attrs) if isinstance(item, Entity) else item
            if key in self.key_to_id or key in new_entities:
                stats.merged_entities += 1
                continue
            merged = default_attrs(key)
            merged.update({k: str(v) for k, v in (attrs or {}).items()})
            new_entities[key] = Entity(next_id, key, merged)
            next_id += 1
        stats.new_entities = len(new_entities)
        known = set(self.entities) | {ent.id for ent in new_entities.values()}

        def resolve(end):
            if isinstance(end, EntityKey):
                if end in self.key_to_id:
                    return self.key_to_id[end]
                if end in new_entities:
                    return new_entities[end].id
                return None
            return end

        accepted: list[Event] = []
        seen_ids: set = set()
        for raw in events:
            if raw.id in self.events or raw.id in seen_ids:
                stats.duplicates += 1
                log.info("skipping duplicate event id %s", raw.id)
                continue
            src, dst = resolve(raw.src), resolve(raw.dst)
            optype = raw.optype
            if not isinstance(optype, OpType):
                try:
                    optype = OpType.parse(str(optype))
                except ValueError:
                    pass
            e = Event(
                raw.id, -1 if src is None else src, -2 if dst is None else dst, optype,
                raw.starttime, raw.endtime, raw.amount, raw.host,
            )
            problems = validate_event(e, known)
            if problems:
                stats.rejected += 1
                stats.reasons.append((raw.id, ", ".join(problems)))
                log.warning("rejected event %s: %s", raw.id, ", ".join(problems))
                continue
            seen_ids.add(e.id)
            accepted.append(e)

        # commit
        for ent in new_entities.values():
            self._index_entity(ent)
        self._next_entity = next_id
        touched_in, touched_out = set(), set()
        for e in accepted:
            self.events[e.id] = e
            self._in.setdefault(e.dst, []).append(e)
            self._out.setdefault(e.src, []).append(e)
            touched_in.add(e.dst)
            touched_out.add(e.src)
        for v in touched_in:
            lst = self._in[v]
            lst.sort(key=lambda e: (e.starttime, e.id))
            self._in_keys[v] = [e.starttime for e in lst]
        for u in touched_out:
            lst = self._out[u]
            lst.sort(key=lambda e: (e.endtime, e.id))
            self._out_keys[u] = [e.endtime for e in lst]
        stats.accepted = len(accepted)
        return stats

    def add_entity(self, key: EntityKey, attrs: Optional[dict] = None) -> int:
        self.insert_batch([(key, attrs or {})])
        return self.key_to_id[key]

    def _incoming(self, v: int, p: TimePredicate) -> Iterator[Event]:
        lst = self._in.get(v)
        if not lst:
            return iter(())
        keys = self._in_keys[v]
        if isinstance(p, StartBefore):
            return iter(lst[: bisect.bisect_left(keys, p.t)])
        if isinstance(p, Window):
            return iter(lst[bisect.bisect_left(keys, p.t1): bisect.bisect_left(keys, p.t2)])
        if isinstance(p, EndAfter):
            return (e for e in lst if e.endtime > p.t)
        return iter(lst)

    def _outgoing(self, u: int, p: TimePredicate) -> Iterator[Event]:
        lst = self._out.get(u)
        if not lst:
            return iter(())
        keys = self._out_keys[u]
        if isinstance(p, EndAfter):
            return reversed(lst[bisect.bisect_right(keys, p.t):])
        if isinstance(p, Window):
            return reversed(lst[bisect.bisect_right(keys, p.t1): bisect.bisect_right(keys, p.t2)])
        if isinstance(p, StartBefore):
            return (e for e in reversed(lst) if e.starttime < p.t)
        return reversed(lst)

    def _event_by_id(self, event_id: int) -> Optional[Event]:
        return self.events.get(event_id)

    def _scan(self) -> Iterator[Event]:
        for v in sorted(self._in):
            yield from self._in[v]

    def degree(self, node: int) -> int:
        return len(self._in.get(node, ())) + len(self._out.get(node, ()))

    @classmethod
    def load(cls, path) -> "MemoryStore":
        """Read a store directory written by :func:`save_store` fully into memory."""
        fs = FileStore(path)
        try:
            store = cls()
            for node in sorted(fs.entities):
                store._index_entity(fs.entities[node])
            store._next_entity = max(fs.entities, default=0) + 1
            store.insert_batch((), fs.all_events())
            return store
        finally:
            fs.close()


# --- on-disk layout ----------------------------------------------------------

MAGIC = b"PVQS"
VERSION = 1
HEADER = struct.Struct("<4sHQ")
RECORD = struct.Struct("<QQQBqqQI")
_START_OFF = 25
_END_OFF = 33
_I64 = struct.Struct("<q")
DIR_ENTRY = struct.Struct("<QQQ")
ID_ENTRY = struct.Struct("<QQ")
STR_LEN = struct.Struct("<H")


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_store(store: EventStore, path) -> None:
    """Persist ``store`` as a directory of fixed-width record files."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    events = list(store.all_events())

    hosts: dict[str, int] = {}
    strtab = bytearray()
    for e in events:
        if e.host not in hosts:
            hosts[e.host] = len(strtab)
            raw = e.host.encode("utf-8")
            strtab += STR_LEN.pack(len(raw)) + raw

    def records(order):
        buf = bytearray(HEADER.pack(MAGIC, VERSION, len(order)))
        for e in order:
            buf += RECORD.pack(e.id, e.src, e.dst, e.optype.code, e.starttime,
                               e.endtime, e.amount, hosts[e.host])
        return bytes(buf)

    def directory(order, node_of):
        buf = bytearray()
        i = 0
        while i < len(order):
            node = node_of(order[i])
            j = i
            while j < len(order) and node_of(order[j]) == node:
                j += 1
            buf += DIR_ENTRY.pack(node, i, j - i)
            i = j
        return bytes(buf)

    by_dst = sorted(events, key=lambda e: (e.dst, e.starttime, e.id))
    by_src = sorted(events, key=lambda e: (e.src, e.endtime, e.id))
    pos = {e.id: i for i, e in enumerate(by_dst)}
    ids = b"".join(ID_ENTRY.pack(eid, pos[eid]) for eid in sorted(pos))

    _write_atomic(root / "in.pvqs", records(by_dst))
    _write_atomic(root / "out.pvqs", records(by_src))
    _write_atomic(root / "in.dir", directory(by_dst, lambda e: e.dst))
    _write_atomic(root / "out.dir", directory(by_src, lambda e: e.src))
    _write_atomic(root / "ids.idx", ids)
    _write_atomic(root / "hosts.str", bytes(strtab))
    lines = []
    for node in sorted(store.entities):
        ent = store.entities[node]
        lines.append(json.dumps({"id": ent.id, "key": ent.key.as_json(), "attrs": ent.attrs},
                                sort_keys=True))
    _write_atomic(root / "entities.jsonl", ("\n".join(lines) + "\n").encode("utf-8"))


def _key_from_json(obj: dict) -> EntityKey:
    kind = Kind.parse(obj["kind"])
    return EntityKey.from_fields(kind, obj["host"], obj)


class FileStore(EventStore):
    """Read-only store over the files written by :func:`save_store`."""

    def __init__(self, path):
        super().__init__()
        self.root = Path(path)
        if not (self.root / "in.pvqs").exists():
            raise StoreError(f"no store at {self.root}")
        for line in (self.root / "entities.jsonl").read_text("utf-8").splitlines():
            if line.strip():
                obj = json.loads(line)
                self._index_entity(Entity(obj["id"], _key_from_json(obj["key"]), obj["attrs"]))
        self._files = []
        self._in_map, self._count = self._open("in.pvqs")
        self._out_map, _ = self._open("out.pvqs")
        self._ids_map = self._map_plain("ids.idx")
        self._in_dir = self._read_dir("in.dir")
        self._out_dir = self._read_dir("out.dir")
        self._hosts_raw = (self.root / "hosts.str").read_bytes()
        self._host_cache: dict[int, str] = {}

    def _map_plain(self, name):
        fh = open(self.root / name, "rb")
        self._files.append(fh)
        if os.fstat(fh.fileno()).st_size == 0:
            return b""
        return mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)

    def _open(self, name):
        m = self._map_plain(name)
        magic, version, count = HEADER.unpack_from(m, 0)
        if magic != MAGIC or version != VERSION:
            raise StoreError(f"{name}: bad header")
        return m, count

    def _read_dir(self, name) -> dict:
        raw = (self.root / name).read_bytes()
        return {
            node: (start, n) for node, start, n in DIR_ENTRY.iter_unpack(raw)
        }

    def close(self) -> None:
        for m in (self._in_map, self._out_map, self._ids_map):
            if isinstance(m, mmap.mmap):
                m.close()
        for fh in self._files:
            fh.close()
        self._files = []

    def __len__(self) -> int:
        return self._count

    def _host(self, off: int) -> str:
        host = self._host_cache.get(off)
        if host is None:
            (n,) = STR_LEN.unpack_from(self._hosts_raw, off)
            host = self._hosts_raw[off + 2: off + 2 + n].decode("utf-8")
            self._host_cache[off] = host
        return host

    def _record(self, m, i: int) -> Event:
        eid, src, dst, op, start, end, amount, host = RECORD.unpack_from(
            m, HEADER.size + i * RECORD.size
        )
        return Event(eid, src, dst, OpType.from_code(op), start, end, amount, self._host(host))

    def _key_at(self, m, i: int, off: int) -> int:
        return _I64.unpack_from(m, HEADER.size + i * RECORD.size + off)[0]

    def _lower(self, m, lo, hi, off, t, right=False) -> int:
        # first index in [lo, hi) whose key is >= t (> t when right)
        while lo < hi:
            mid = (lo + hi) // 2
            k = self._key_at(m, mid, off)
            if k < t or (right and k == t):
                lo = mid + 1
            else:
                hi = mid
        return lo

    def _incoming(self, v: int, p: TimePredicate) -> Iterator[Event]:
        if v not in self._in_dir:
            return
        start, n = self._in_dir[v]
        lo, hi = start, start + n
        m = self._in_map
        if isinstance(p, StartBefore):
            hi = self._lower(m, lo, hi, _START_OFF, p.t)
        elif isinstance(p, Window):
            lo, hi = (self._lower(m, lo, hi, _START_OFF, p.t1),
                      self._lower(m, lo, hi, _START_OFF, p.t2))
        for i in range(lo, hi):
            e = self._record(m, i)
            if not isinstance(p, EndAfter) or e.endtime > p.t:
                yield e

    def _outgoing(self, u: int, p: TimePredicate) -> Iterator[Event]:
        if u not in self._out_dir:
            return
        start, n = self._out_dir[u]
        lo, hi = start, start + n
        m = self._out_map
        if isinstance(p, EndAfter):
            lo = self._lower(m, lo, hi, _END_OFF, p.t, right=True)
        elif isinstance(p, Window):
            lo, hi = (self._lower(m, lo, hi, _END_OFF, p.t1, right=True),
                      self._lower(m, lo, hi, _END_OFF, p.t2, right=True))
        for i in range(hi - 1, lo - 1, -1):
            e = self._record(m, i)
            if not isinstance(p, StartBefore) or e.starttime < p.t:
                yield e

    def _event_by_id(self, event_id: int) -> Optional[Event]:
        m = self._ids_map
        lo, hi = 0, len(m) // ID_ENTRY.size
        while lo < hi:
            mid = (lo + hi) // 2
            eid, pos = ID_ENTRY.unpack_from(m, mid * ID_ENTRY.size)
            if eid == event_id:
                return self._record(self._in_map, pos)
            if eid < event_id:
                lo = mid + 1
            else:
                hi = mid
        return None

    def _scan(self) -> Iterator[Event]:
        for i in range(self._count):
            yield self._record(self._in_map, i)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_store(path, variant: str = "memory") -> EventStore:
    if variant == "memory":
        return MemoryStore.load(path)
    if variant == "file":
        return FileStore(path)
    raise ValueError(f"unknown store variant {variant!r}")
