"""Domain types shared by the store, the query engine and the graph algebra."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union


class Kind(str, enum.Enum):
    FILE = "file"
    PROCESS = "process"
    NETWORK = "network"

    @classmethod
    def parse(cls, text: str) -> "Kind":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown entity kind {text!r}") from None


class OpType(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    RENAME = "rename"
    CREATE_OBJECT = "create_object"
    EXECUTE = "execute"
    CLONE = "clone"
    RECVMSG = "recvmsg"
    SENDMSG = "sendmsg"

    @classmethod
    def parse(cls, text: str) -> "OpType":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown operation {text!r}") from None

    @property
    def code(self) -> int:
        return _OP_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "OpType":
        return _OPS_BY_CODE[code]


_OP_CODES = {op: i for i, op in enumerate(OpType)}
_OPS_BY_CODE = {i: op for op, i in _OP_CODES.items()}

# discriminator field names per kind, in key order
KEY_FIELDS = {
    Kind.FILE: ("path",),
    Kind.PROCESS: ("pid", "name"),
    Kind.NETWORK: ("src_ip", "src_port", "dst_ip", "dst_port"),
}


@dataclass(frozen=True, order=True)
class EntityKey:
    """Host-scoped identity of a file, process or network connection."""

    host: str
    kind: Kind
    disc: tuple

    def __post_init__(self):
        expected = len(KEY_FIELDS[self.kind])
        if len(self.disc) != expected:
            raise ValueError(
                f"{self.kind.value} key needs {expected} fields, got {len(self.disc)}"
            )
        if any(v is None or v == "" for v in self.disc):
            raise ValueError(f"empty discriminator field in {self.disc!r}")

    @classmethod
    def file(cls, host: str, path: str) -> "EntityKey":
        return cls(str(host), Kind.FILE, (str(path),))

    @classmethod
    def process(cls, host: str, pid: int, name: str) -> "EntityKey":
        return cls(str(host), Kind.PROCESS, (int(pid), str(name)))

    @classmethod
    def network(
        cls, host: str, src_ip: str, src_port: int, dst_ip: str, dst_port: int
    ) -> "EntityKey":
        return cls(
            str(host),
            Kind.NETWORK,
            (str(src_ip), int(src_port), str(dst_ip), int(dst_port)),
        )

    @classmethod
    def from_fields(cls, kind: Kind, host: str, fields: dict) -> "EntityKey":
        if kind is Kind.FILE:
            return cls.file(host, fields["path"])
        if kind is Kind.PROCESS:
            return cls.process(host, fields["pid"], fields["name"])
        return cls.network(
            host, fields["src_ip"], fields["src_port"], fields["dst_ip"], fields["dst_port"]
        )

    def fields(self) -> dict:
        return dict(zip(KEY_FIELDS[self.kind], self.disc))

    @property
    def label(self) -> str:
        if self.kind is Kind.FILE:
            return self.disc[0]
        if self.kind is Kind.PROCESS:
            return f"{self.disc[1]}[{self.disc[0]}]"
        s_ip, s_port, d_ip, d_port = self.disc
        return f"{s_ip}:{s_port}->{d_ip}:{d_port}"

    def as_json(self) -> dict:
        return {"kind": self.kind.value, "host": self.host, **self.fields()}

    def sort_key(self) -> tuple:
        return (self.host, self.kind.value, tuple(str(v) for v in self.disc))


def default_attrs(key: EntityKey) -> dict[str, str]:
    """Attributes every entity carries, derived from its key."""
    attrs = {k: str(v) for k, v in key.fields().items()}
    attrs["host_id"] = key.host
    if key.kind is Kind.FILE:
        attrs["name"] = key.disc[0]
    return attrs


@dataclass(frozen=True)
class Entity:
    id: int
    key: EntityKey
    attrs: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def kind(self) -> Kind:
        return self.key.kind

    @property
    def host(self) -> str:
        return self.key.host

    def attr(self, name: str) -> Optional[str]:
        return self.attrs.get(name)


@dataclass(frozen=True)
class Event:
    id: int
    src: int
    dst: int
    optype: OpType
    starttime: int
    endtime: int
    amount: int = 0
    host: str = ""


@dataclass(frozen=True)
class RawEvent:
    """An event whose endpoints may still be entity keys rather than store ids."""

    id: int
    src: Union[EntityKey, int]
    dst: Union[EntityKey, int]
    optype: Union[OpType, str]
    starttime: int
    endtime: int
    amount: int = 0
    host: str = ""


def validate_event(e: Event, known_entities) -> list[str]:
    """Return every violated event invariant; an empty list means the event is fine."""
    problems = []
    if not isinstance(e.starttime, int) or not isinstance(e.endtime, int):
        problems.append("non-integer time")
    elif e.starttime > e.endtime:
        problems.append("time order")
    if e.src == e.dst:
        problems.append("self loop")
    if e.src not in known_entities:
        problems.append("unknown src")
    if e.dst not in known_entities:
        problems.append("unknown dst")
    if not isinstance(e.optype, OpType):
        problems.append("bad optype")
    if not isinstance(e.amount, int) or e.amount < 0:
        problems.append("negative amount")
    return problems


@dataclass(frozen=True)
class GraphEdge:
    src: int
    dst: int
    optype: OpType
    starttime: int
    endtime: int
    amount: int
    raw_ids: tuple
    weight: Optional[float] = None

    def __post_init__(self):
        if not self.raw_ids:
            raise ValueError("edge needs at least one raw event")
        if self.starttime > self.endtime:
            raise ValueError("edge time hull inverted")
        if self.weight is not None and not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight {self.weight} outside [0, 1]")

    @classmethod
    def from_event(cls, e: Event) -> "GraphEdge":
        return cls(e.src, e.dst, e.optype, e.starttime, e.endtime, e.amount, (e.id,))

    @property
    def raw_count(self) -> int:
        return len(self.raw_ids)

    @property
    def id(self) -> int:
        return self.raw_ids[0]

    @property
    def ends(self) -> tuple[int, int, OpType]:
        return (self.src, self.dst, self.optype)

    def with_weight(self, weight: Optional[float]) -> "GraphEdge":
        return GraphEdge(
            self.src, self.dst, self.optype, self.starttime, self.endtime,
            self.amount, self.raw_ids, weight,
        )


def fuse_edges(edges: Iterable[GraphEdge]) -> GraphEdge:
    """Fuse edges with the same endpoints: time hull, summed amount, pooled raw ids."""
    edges = list(edges)
    first = edges[0]
    weights = [e.weight for e in edges if e.weight is not None]
    raw_ids = []
    for e in edges:
        raw_ids.extend(e.raw_ids)
    return GraphEdge(
        first.src,
        first.dst,
        first.optype,
        min(e.starttime for e in edges),
        max(e.endtime for e in edges),
        sum(e.amount for e in edges),
        tuple(raw_ids),
        max(weights) if weights else None,
    )


@dataclass
class ProvGraph:
    """A materialized provenance graph.

    ``entities`` carries the Entity record of every node so that graphs can be
    merged by entity key even when they come from different stores.
    """

    entities: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    scores: dict = field(default_factory=dict)
    poi_node: Optional[int] = None
    truncated: bool = False

    @property
    def nodes(self) -> set:
        return set(self.entities)

    def add_entity(self, entity: Entity) -> None:
        self.entities.setdefault(entity.id, entity)

    def key_of(self, node: int) -> EntityKey:
        return self.entities[node].key

    def out_edges(self) -> dict:
        out: dict = {}
        for e in self.edges:
            out.setdefault(e.src, []).append(e)
        return out

    def in_edges(self) -> dict:
        inc: dict = {}
        for e in self.edges:
            inc.setdefault(e.dst, []).append(e)
        return inc

    def signature(self, e: GraphEdge) -> tuple:
        return (self.key_of(e.src), self.key_of(e.dst), e.optype)

    def signatures(self) -> set:
        return {self.signature(e) for e in self.edges}

    def raw_event_ids(self) -> set:
        ids = set()
        for e in self.edges:
            ids.update(e.raw_ids)
        return ids

    def check(self) -> list[str]:
        problems = []
        for e in self.edges:
            if e.src not in self.entities or e.dst not in self.entities:
                problems.append(f"edge {e.id} endpoint outside node set")
        for node, rel in self.scores.items():
            if not (rel == rel and 0.0 <= rel < float("inf")):
                problems.append(f"bad score {rel!r} at {node}")
        return problems

    def copy(self) -> "ProvGraph":
        return ProvGraph(
            dict(self.entities), list(self.edges), dict(self.scores),
            self.poi_node, self.truncated,
        )

    def __len__(self) -> int:
        return len(self.edges)
