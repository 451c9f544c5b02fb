"""Union and intersection of provenance graphs, plus export formats.

Graphs from different stores are matched through edge signatures
``(src key, dst key, optype)``, never through surrogate ids.  Results are
re-keyed onto the left operand's ids where possible; nodes only present in
the right operand keep their ids unless those collide, in which case they
get fresh negative ids.
"""

from __future__ import annotations

import csv
import io
import json
from .model import Entity, EntityKey, GraphEdge, Kind, OpType, ProvGraph, fuse_edges


def _edge_sort(g: ProvGraph, e: GraphEdge) -> tuple:
    return (g.key_of(e.src).sort_key(), g.key_of(e.dst).sort_key(), e.optype.code, e.starttime, e.raw_ids)


def _remap(g1: ProvGraph, g2: ProvGraph) -> tuple[dict, dict]:
    """Map g2 node ids into a shared id space keyed by entity key."""
    by_key = {ent.key: n for n, ent in g1.entities.items()}
    used = set(g1.entities)
    mapping = {}
    extra = {}
    fresh = -1
    for n in sorted(g2.entities):
        ent = g2.entities[n]
        if ent.key in by_key:
            mapping[n] = by_key[ent.key]
            continue
        target = n
        if target in used:
            while fresh in used:
                fresh -= 1
            target = fresh
        used.add(target)
        by_key[ent.key] = target
        mapping[n] = target
        extra[target] = Entity(target, ent.key, ent.attrs)
    return mapping, extra


def _moved(e: GraphEdge, mapping: dict) -> GraphEdge:
    return GraphEdge(mapping[e.src], mapping[e.dst], e.optype, e.starttime, e.endtime,
                     e.amount, e.raw_ids, e.weight)


def _by_signature(g: ProvGraph) -> dict:
    out: dict = {}
    for e in g.edges:
        out.setdefault(g.signature(e), []).append(e)
    return out


def _fuse_group(edges: list) -> GraphEdge:
    """Fuse edges sharing a signature; raw events seen twice count once."""
    fused = fuse_edges(edges)
    ids = tuple(dict.fromkeys(fused.raw_ids))
    if len(ids) == len(fused.raw_ids):
        return fused
    # an edge whose raw events are all covered already adds no amount
    seen: set = set()
    amount = 0
    for e in sorted(edges, key=lambda e: (-len(e.raw_ids), e.raw_ids)):
        if not set(e.raw_ids) <= seen:
            amount += e.amount
        seen.update(e.raw_ids)
    return GraphEdge(fused.src, fused.dst, fused.optype, fused.starttime, fused.endtime,
                     amount, ids, fused.weight)


def union(g1: ProvGraph, g2: ProvGraph) -> ProvGraph:
    """Nodes by entity key, edges by signature.

    Identical edges (same raw events) collapse to one, keeping the larger
    weight.  Per signature, when the raw-event groups of one operand are
    contained in the other's, the larger side is kept as it is; otherwise
    the signature becomes one fused edge (time hull, amount without double
    counting, pooled raw ids, max weight).
    """
    mapping, extra = _remap(g1, g2)
    entities = dict(g1.entities)
    entities.update(extra)
    groups: dict = {}
    for side, edges in ((0, g1.edges), (1, [_moved(e, mapping) for e in g2.edges])):
        for e in edges:
            sig = (entities[e.src].key, entities[e.dst].key, e.optype)
            bucket = groups.setdefault(sig, {})
            ident = frozenset(e.raw_ids)
            if ident in bucket:
                sides, prev = bucket[ident]
                if prev.weight is None or (e.weight is not None and e.weight > prev.weight):
                    prev = e
                bucket[ident] = (sides | {side}, prev)
                continue
            bucket[ident] = ({side}, e)
    out_edges = []
    for bucket in groups.values():
        left = {i for i, (sides, _) in bucket.items() if 0 in sides}
        right = {i for i, (sides, _) in bucket.items() if 1 in sides}
        if left <= right or right <= left:
            out_edges.extend(e for _, e in bucket.values())
        else:
            out_edges.append(_fuse_group([e for _, e in bucket.values()]))
    scores = dict(g1.scores)
    for n, s in g2.scores.items():
        m = mapping[n]
        scores[m] = max(scores.get(m, s), s)
    poi = g1.poi_node
    if poi is None and g2.poi_node is not None:
        poi = mapping.get(g2.poi_node)
    out = ProvGraph(entities, out_edges, scores, poi, g1.truncated or g2.truncated)
    out.edges.sort(key=lambda e: _edge_sort(out, e))
    return out


def intersect(g1: ProvGraph, g2: ProvGraph) -> ProvGraph:
    """Edges of g1 whose signature also occurs in g2; weight is the max of both."""
    right = _by_signature(g2)
    edges = []
    for e in g1.edges:
        sig = g1.signature(e)
        others = right.get(sig)
        if not others:
            continue
        ws = [x.weight for x in others if x.weight is not None]
        if e.weight is not None:
            ws.append(e.weight)
        edges.append(e.with_weight(max(ws)) if ws else e)
    used = {e.src for e in edges} | {e.dst for e in edges}
    entities = {n: ent for n, ent in g1.entities.items() if n in used}
    scores = {n: s for n, s in g1.scores.items() if n in used}
    poi = g1.poi_node if g1.poi_node in used else None
    return ProvGraph(entities, edges, scores, poi, g1.truncated or g2.truncated)


def combine(op: str, g1: ProvGraph, g2: ProvGraph) -> ProvGraph:
    if op == "union":
        return union(g1, g2)
    if op == "intersect":
        return intersect(g1, g2)
    raise ValueError(f"unknown merge operator {op!r}")


# --- export ---------------------------------------------------------------------------


def _ordered(g: ProvGraph) -> tuple[list, list]:
    nodes = sorted(g.entities.values(), key=lambda ent: ent.key.sort_key())
    edges = sorted(g.edges, key=lambda e: _edge_sort(g, e))
    return nodes, edges


def _node_label(ent: Entity) -> str:
    key = ent.key
    if key.kind.value == "file":
        name = key.fields()["path"]
    elif key.kind.value == "process":
        f = key.fields()
        name = f"{f['name']}[{f['pid']}]"
    else:
        f = key.fields()
        name = f"{f['src_ip']}:{f['src_port']}->{f['dst_ip']}:{f['dst_port']}"
    return f"{key.kind.value}:{name}"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(g: ProvGraph) -> str:
    nodes, edges = _ordered(g)
    ident = {ent.id: f"n{i}" for i, ent in enumerate(nodes)}
    lines = ["digraph provenance {", "  rankdir=LR;"]
    shapes = {"file": "ellipse", "process": "box", "network": "diamond"}
    for ent in nodes:
        label = _node_label(ent)
        extra = ""
        if ent.id in g.scores:
            extra = f"\\nrel={g.scores[ent.id]:.4g}"
        lines.append(f'  {ident[ent.id]} [label="{_dot_escape(label)}{extra}", '
                     f'shape={shapes[ent.key.kind.value]}];')
    for e in edges:
        w = "" if e.weight is None else f" w={e.weight:.4g}"
        lines.append(f'  {ident[e.src]} -> {ident[e.dst]} '
                     f'[label="{e.optype.value} [{e.starttime},{e.endtime}]{w}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json_obj(g: ProvGraph) -> dict:
    nodes, edges = _ordered(g)
    return {
        "poi": None if g.poi_node is None else g.key_of(g.poi_node).as_json(),
        "truncated": g.truncated,
        "nodes": [
            {"key": ent.key.as_json(), "attrs": dict(sorted(ent.attrs.items())),
             "rel": g.scores.get(ent.id)}
            for ent in nodes
        ],
        "edges": [
            {
                "sig": [g.key_of(e.src).as_json(), g.key_of(e.dst).as_json(), e.optype.value],
                "start": e.starttime, "end": e.endtime, "amount": e.amount,
                "raw_count": e.raw_count, "raw_ids": list(e.raw_ids), "weight": e.weight,
            }
            for e in edges
        ],
    }


def to_json(g: ProvGraph) -> str:
    return json.dumps(to_json_obj(g), indent=1, sort_keys=True) + "\n"


CSV_HEADER = ["src", "dst", "optype", "start", "end", "amount", "raw_count", "weight", "raw_ids"]


def to_csv(g: ProvGraph) -> str:
    _, edges = _ordered(g)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for e in edges:
        w.writerow([
            _node_label(g.entities[e.src]), _node_label(g.entities[e.dst]), e.optype.value,
            e.starttime, e.endtime, e.amount, e.raw_count,
            "" if e.weight is None else repr(e.weight), " ".join(map(str, e.raw_ids)),
        ])
    return buf.getvalue()


def export(g: ProvGraph, fmt: str) -> bytes:
    if fmt == "dot":
        return to_dot(g).encode()
    if fmt == "json":
        return to_json(g).encode()
    if fmt == "csv":
        return to_csv(g).encode()
    raise ValueError(f"unknown export format {fmt!r}")


def _key(obj: dict) -> EntityKey:
    fields = {k: v for k, v in obj.items() if k not in ("kind", "host")}
    return EntityKey.from_fields(Kind.parse(obj["kind"]), str(obj["host"]), fields)


def from_json(text) -> ProvGraph:
    """Rebuild a graph written by :func:`to_json`; node ids follow the node order."""
    obj = json.loads(text)
    g = ProvGraph(truncated=bool(obj.get("truncated", False)))
    ids: dict = {}
    for i, n in enumerate(obj["nodes"]):
        key = _key(n["key"])
        ids[key] = i
        g.entities[i] = Entity(i, key, dict(n.get("attrs") or {}))
        if n.get("rel") is not None:
            g.scores[i] = float(n["rel"])
    for e in obj["edges"]:
        s, d, op = e["sig"]
        g.edges.append(GraphEdge(
            ids[_key(s)], ids[_key(d)], OpType.parse(op), int(e["start"]), int(e["end"]),
            int(e["amount"]), tuple(e["raw_ids"]), e.get("weight"),
        ))
    if obj.get("poi") is not None:
        g.poi_node = ids[_key(obj["poi"])]
    return g


def graphs_equal(g1: ProvGraph, g2: ProvGraph) -> bool:
    """Structural equality through entity keys (ids may differ)."""
    return to_json_obj(g1) == to_json_obj(g2)
