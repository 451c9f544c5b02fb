"""Query execution: POI lookup, constrained traversal and the stage pipeline.

Traversal keeps a per-node time bound derived from the step's WHERE clause
(``r.starttime < X`` backward, ``re.endtime > X`` forward).  The bound is
pushed down to the store as a time predicate; when a newly discovered edge
relaxes a node's bound the node is expanded again, fetching only the window
between its old and new bound.  This reaches the same fixpoint as the
dependency-closure definition while touching only the adjacency of
discovered nodes.
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import algebra, analytics
from .config import Config
from .evaluator import (
    NEG_INF, Binding, EvalError, GraphAdjacency, GraphRef, NodeRef, eval_bool, evaluate, free_vars,
)
from .lang import ast as A
from .lang.semantics import validate_ast
from .model import Entity, Event, GraphEdge, Kind, OpType, ProvGraph
from .store import ALL, EventPattern, EventStore, EndAfter, StartBefore, Window

log = logging.getLogger(__name__)


class ExecutionError(RuntimeError):
    def __init__(self, message: str, sub_query: Optional[int] = None, stage: Optional[int] = None):
        where = ""
        if sub_query is not None:
            where = f"sub-query {sub_query}" + (f" stage {stage}" if stage is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)
        self.sub_query = sub_query
        self.stage = stage


class POINotFound(ExecutionError):
    pass


class AmbiguousPOI(ExecutionError):
    def __init__(self, candidates: list):
        ids = ", ".join(str(e.id) for e in candidates)
        super().__init__(f"ambiguous POI: {len(candidates)} events match (ids {ids})")
        self.candidates = candidates


@dataclass(frozen=True)
class Limits:
    max_edges: int = 5_000_000
    max_nodes: Optional[int] = None
    max_depth: Optional[int] = None

    @classmethod
    def from_config(cls, cfg: Config) -> "Limits":
        return cls(cfg.max_edges, cfg.max_nodes, cfg.max_depth)


# --- POI ----------------------------------------------------------------------------


@dataclass
class POI:
    event: Event
    edge_var: Optional[str]
    src_var: Optional[str]
    dst_var: Optional[str]

    def bindings(self) -> dict:
        out = {}
        if self.edge_var:
            out[self.edge_var] = self.event
        if self.src_var:
            out[self.src_var] = NodeRef(self.event.src)
        if self.dst_var:
            out[self.dst_var] = NodeRef(self.event.dst)
        return out


def _kind_of_label(label: Optional[str]) -> Optional[Kind]:
    if label is None:
        return None
    try:
        return Kind.parse(label)
    except ValueError:
        raise ExecutionError(f"unknown node label {label!r}") from None


def event_pattern(part: A.PathPattern) -> EventPattern:
    src, dst, edge = part.source, part.sink, part.edge
    pat = EventPattern(
        src_kind=_kind_of_label(src.label), dst_kind=_kind_of_label(dst.label),
        src_attrs=dict(src.props), dst_attrs=dict(dst.props), category=edge.label,
    )
    for key, value in edge.props:
        k = key.lower()
        if k == "id":
            pat.event_id = int(value)
        elif k == "optype":
            try:
                pat.optype = OpType.parse(str(value))
            except ValueError as exc:
                raise ExecutionError(str(exc)) from None
        elif k in ("host", "hostid", "host_id"):
            pat.host = str(value)
        else:
            raise ExecutionError(f"unsupported construct: edge property {key!r} in MATCH")
    return pat


def locate_poi(match: A.MatchClause, store: EventStore) -> POI:
    """Resolve the sub-query's leading MATCH to exactly one event."""
    if not match.is_path or len(match.pattern) != 1:  # type: ignore[arg-type]
        raise ExecutionError("unsupported construct: the leading MATCH must be one edge pattern")
    part: A.PathPattern = match.pattern[0]  # type: ignore[index]
    pat = event_pattern(part)
    hits = store.find_events(pat)
    poi_vars = (part.edge.var, part.source.var, part.sink.var)
    if match.where is not None:
        kept = []
        for e in hits:
            b = Binding(POI(e, *poi_vars).bindings(), _StoreAdjacency(store))
            try:
                if eval_bool(match.where, b):
                    kept.append(e)
            except EvalError as exc:
                raise ExecutionError(f"POI filter: {exc}") from None
        hits = kept
    if not hits:
        raise POINotFound("POI not found")
    if len(hits) > 1:
        raise AmbiguousPOI(hits)
    return POI(hits[0], *poi_vars)


class _StoreAdjacency:
    """Whole-store adjacency, used only for filters on the POI pattern."""

    def __init__(self, store: EventStore):
        self.store = store

    def out(self, node: int) -> list:
        return list(self.store.outgoing(node))

    def in_(self, node: int) -> list:
        return list(self.store.incoming(node))

    def entity(self, node: int) -> Optional[Entity]:
        return self.store.entities.get(node)

    def score(self, node: int) -> Optional[float]:
        return None


# --- traversal plan -----------------------------------------------------------------

_ADJ_CALLS = ("count", "out", "in", "nodes")


def _adjacency_dependent(expr) -> bool:
    return any(
        isinstance(n, A.Aggregate) or (isinstance(n, A.Call) and n.name in _ADJ_CALLS)
        for n in A.walk(expr)
    )


@dataclass
class TraversalPlan:
    direction: str  # backward / forward
    algo: str
    edge_var: str
    node_var: Optional[str]
    bound_expr: Optional[object]
    residual: list
    residual_dynamic: bool
    # fast path for ``max|min(collect(x IN out|in(v) | x.field))``
    running: Optional[tuple] = None  # (fn, side, field)

    @property
    def backward(self) -> bool:
        return self.direction == "backward"


def _running_aggregate(expr, node_var: Optional[str]) -> Optional[tuple]:
    if not isinstance(expr, A.Aggregate) or node_var is None:
        return None
    c = expr.collect
    if not (isinstance(c.source, A.Call) and c.source.name in ("out", "in")
            and c.source.args == (A.Var(node_var),)):
        return None
    if not (isinstance(c.body, A.Prop) and c.body.base == A.Var(c.var)
            and c.body.key in ("starttime", "endtime", "amount")):
        return None
    return (expr.fn, c.source.name, c.body.key)


def plan_traversal(t: A.Traversal) -> TraversalPlan:
    step = t.step
    backward = t.direction == "backward"
    b = step.binding()
    want = "dst" if backward else "src"
    if b is None or b[1] != A.Call(want, (A.Var(t.edge_var),)):
        raise ExecutionError(
            f"unsupported construct: {t.direction} step must be MATCH v = {want}({t.edge_var})"
        )
    node_var = b[0]
    if step.order or step.limit is not None:
        raise ExecutionError("unsupported construct: ORDER BY/LIMIT inside a traversal step")
    bound_expr = None
    residual = []
    field_name, op, flipped = ("starttime", "<", ">") if backward else ("endtime", ">", "<")
    edge_prop = A.Prop(A.Var(t.edge_var), field_name)
    for c in (A.conjuncts(step.where) if step.where is not None else []):
        candidate = None
        if isinstance(c, A.Compare):
            if c.op == op and c.left == edge_prop:
                candidate = c.right
            elif c.op == flipped and c.right == edge_prop:
                candidate = c.left
        if candidate is not None and bound_expr is None and t.edge_var not in free_vars(candidate):
            bound_expr = candidate
        else:
            residual.append(c)
    dynamic = any(_adjacency_dependent(c) for c in residual)
    return TraversalPlan(
        t.direction, t.algo, t.edge_var, node_var, bound_expr, residual, dynamic,
        _running_aggregate(bound_expr, node_var),
    )


# --- traversal ------------------------------------------------------------------------


@dataclass
class TraversalStats:
    expansions: int = 0
    fetched: int = 0
    accepted: int = 0
    rejected: int = 0
    truncated: bool = False


class _Discovered:
    """Adjacency of the graph under construction, with virtual seed edges."""

    def __init__(self, store: EventStore):
        self.store = store
        self.edges: dict = {}
        self._out: dict = {}
        self._in: dict = {}
        self.virtual_out: dict = {}
        self.virtual_in: dict = {}

    def add(self, e: Event) -> None:
        self.edges[e.id] = e
        self._out.setdefault(e.src, []).append(e)
        self._in.setdefault(e.dst, []).append(e)

    def out(self, node: int) -> list:
        return self.virtual_out.get(node, []) + self._out.get(node, [])

    def in_(self, node: int) -> list:
        return self.virtual_in.get(node, []) + self._in.get(node, [])

    def entity(self, node: int) -> Optional[Entity]:
        return self.store.entities.get(node)

    def score(self, node: int) -> Optional[float]:
        return None

    def version(self, node: int) -> int:
        return len(self._out.get(node, ())) + len(self._in.get(node, ()))


def _sentinel(node: int) -> Event:
    # stands in for "whatever reached the entry": admits every later out-edge
    return Event(-1, -1, node, OpType.READ, NEG_INF, NEG_INF)  # type: ignore[arg-type]


def traverse(
    store: EventStore,
    plan: TraversalPlan,
    starts: list,
    base: dict,
    limits: Limits = Limits(),
    seed_edge: Optional[Event] = None,
) -> tuple[ProvGraph, TraversalStats]:
    """Run one constrained search to its fixpoint.

    Backward searches seed the discovered graph with ``seed_edge`` (the POI
    event) and treat it as a virtual out-edge of every start node, so the
    start's bound is the POI end time.  Forward searches give every start a
    virtual in-edge at ``-inf``.
    """
    disc = _Discovered(store)
    stats = TraversalStats()
    backward = plan.backward
    running: dict = {}
    rejects: dict = {}
    expanded: dict = {}
    visited: set = set()
    depth: dict = {}
    queued: set = set()
    frontier: deque = deque()
    nodes: set = set()

    def better(new, old) -> bool:
        return new > old if backward else new < old

    def fold(node: int, e: Event, virtual: bool = False):
        if plan.running is None:
            return
        fn, side, field_name = plan.running
        if not virtual and ((side == "out" and e.src != node) or (side == "in" and e.dst != node)):
            return
        v = getattr(e, field_name)
        cur = running.get(node)
        if cur is None or (v > cur if fn == "max" else v < cur):
            running[node] = v

    def bound(node: int):
        if plan.bound_expr is None:
            return None
        if plan.running is not None:
            return running.get(node, NEG_INF)
        b = Binding({**base, plan.node_var: NodeRef(node)}, disc)
        return evaluate(plan.bound_expr, b)

    def guard_key(node: int):
        return (node, bound(node), disc.version(node) if plan.residual_dynamic else 0)

    def notify(node: int):
        if node in queued:
            return
        key = guard_key(node)
        if key in visited:
            return
        b = key[1]
        if node in expanded and not plan.residual_dynamic:
            old = expanded[node]
            if b is None or not better(b, old):
                return
        queued.add(node)
        frontier.append(node)

    def accept(e: Event, node: int):
        disc.add(e)
        stats.accepted += 1
        other = e.src if backward else e.dst
        for n in (e.src, e.dst):
            nodes.add(n)
            fold(n, e)
        if other not in depth:
            depth[other] = depth[node] + 1
        notify(other)
        if (plan.bound_expr is not None and plan.running is None) or plan.residual_dynamic:
            notify(node)

    for s in starts:
        nodes.add(s)
        depth[s] = 0
        if backward and seed_edge is not None:
            disc.virtual_out.setdefault(s, []).append(seed_edge)
            fold(s, seed_edge, virtual=True)
        elif not backward:
            sentinel = _sentinel(s)
            disc.virtual_in.setdefault(s, []).append(sentinel)
            fold(s, sentinel, virtual=True)
    if seed_edge is not None and backward:
        disc.add(seed_edge)
        for n in (seed_edge.src, seed_edge.dst):
            nodes.add(n)
            depth.setdefault(n, 1)
        # the POI event is a real out-edge of its source
        fold(seed_edge.src, seed_edge)
        if seed_edge.dst not in starts:
            fold(seed_edge.dst, seed_edge)
    for s in starts:
        notify(s)
    if backward and seed_edge is not None and seed_edge.src not in starts:
        notify(seed_edge.src)

    while frontier:
        node = frontier.popleft() if plan.algo == "bfs" else frontier.pop()
        queued.discard(node)
        key = guard_key(node)
        if key in visited:
            continue
        visited.add(key)
        b = key[1]
        if limits.max_depth is not None and depth.get(node, 0) >= limits.max_depth:
            stats.truncated = True
            continue
        first = node not in expanded
        old = expanded.get(node)
        expanded[node] = b if first or b is None or better(b, old) else old
        stats.expansions += 1
        if b is None:
            pred = ALL if first else None
        elif first:
            pred = StartBefore(b) if backward else EndAfter(b)
        elif better(b, old):
            pred = Window(old, b) if backward else Window(b, old)
        else:
            pred = None
        fetched = []
        if pred is not None:
            fetched = list(store.incoming(node, pred) if backward else store.outgoing(node, pred))
            stats.fetched += len(fetched)
        candidates = fetched
        if plan.residual_dynamic and rejects.get(node):
            candidates = rejects.pop(node) + fetched
        for e in candidates:
            if e.id in disc.edges:
                continue
            slots = {**base, plan.edge_var: e}
            if plan.node_var is not None:
                slots[plan.node_var] = NodeRef(node)
            bb = Binding(slots, disc)
            try:
                ok = all(eval_bool(c, bb) for c in plan.residual)
            except EvalError as exc:
                raise ExecutionError(f"traversal condition on event {e.id}: {exc}") from None
            if not ok:
                stats.rejected += 1
                if plan.residual_dynamic:
                    rejects.setdefault(node, []).append(e)
                continue
            if len(disc.edges) >= limits.max_edges or (
                limits.max_nodes is not None and len(nodes | {e.src, e.dst}) > limits.max_nodes
            ):
                stats.truncated = True
                frontier.clear()
                break
            accept(e, node)

    if stats.truncated:
        log.warning("traversal hit its limits; returning a partial graph")
    g = ProvGraph(truncated=stats.truncated)
    for n in sorted(nodes):
        g.add_entity(store.entity(n))
    g.edges = [GraphEdge.from_event(disc.edges[i]) for i in sorted(disc.edges)]
    return g, stats


def backward_search(
    store: EventStore, poi: POI, spec: A.Traversal, limits: Limits = Limits(), extra: Optional[dict] = None,
) -> ProvGraph:
    plan = plan_traversal(spec)
    start = _resolve_start(spec.start_var, {**poi.bindings(), **(extra or {})})
    g, _ = traverse(store, plan, start, {**poi.bindings(), **(extra or {})}, limits, poi.event)
    g.poi_node = poi.event.dst
    return g


def forward_search(
    store: EventStore, entries: list, spec: A.Traversal, limits: Limits = Limits(),
    base: Optional[dict] = None,
) -> ProvGraph:
    if not entries:
        raise ExecutionError("no entries for forward search")
    plan = plan_traversal(spec)
    g, _ = traverse(store, plan, list(entries), dict(base or {}), limits)
    return g


def _resolve_start(name: str, slots: dict) -> list:
    if name not in slots:
        raise ExecutionError(f"unbound start node {name!r}")
    v = slots[name]
    if isinstance(v, NodeRef):
        return [v.id]
    if isinstance(v, list) and all(isinstance(x, NodeRef) for x in v):
        return [x.id for x in v]
    raise ExecutionError(f"{name!r} is not a node or node list")


# --- entry selection --------------------------------------------------------------------


def select_entries(g: ProvGraph, match: A.MatchClause, base: Optional[dict] = None,
                   graphs: Optional[dict] = None) -> list:
    """Nodes of ``g`` passing the filter, ordered by the sort keys, cut to LIMIT."""
    if not isinstance(match.pattern, A.IdIn):
        raise ExecutionError("unsupported construct: entry selection must be MATCH n IN nodes(...)")
    var = match.pattern.var
    adjacency = GraphAdjacency(g)
    slots = dict(base or {})
    b0 = Binding(slots, adjacency, None, graphs or {})
    pool = evaluate(match.pattern.source, b0)
    if not isinstance(pool, list):
        raise ExecutionError("entry source must be a node collection")
    rows = []
    for node in pool:
        b = b0.child(**{var: node})
        if match.where is None or eval_bool(match.where, b):
            keys = []
            for item in match.order:
                v = evaluate(item.expr, b)
                if isinstance(v, bool) or not isinstance(v, (int, float, str)):
                    raise ExecutionError("ORDER BY key must be a number or string")
                keys.append(v)
            rows.append((keys, node.id, node))

    def sort_key(row):
        out = []
        for item, v in zip(match.order, row[0]):
            out.append(_Desc(v) if item.descending else v)
        out.append(row[1])
        return tuple(out)
    rows.sort(key=sort_key)
    if match.limit is not None:
        rows = rows[: match.limit]
    return [r[2] for r in rows]


class _Desc:
    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __lt__(self, other):
        return self.v > other.v

    def __eq__(self, other):
        return self.v == other.v


# --- pipeline ----------------------------------------------------------------------------


@dataclass
class StageRecord:
    sub_query: int
    stage: int
    kind: str
    edges: int
    nodes: int
    seconds: float
    raw_edges: Optional[int] = None
    fetched: Optional[int] = None
    truncated: bool = False
    detail: dict = field(default_factory=dict)

    def as_json(self) -> dict:
        out = {
            "sub_query": self.sub_query, "stage": self.stage, "kind": self.kind,
            "edges": self.edges, "nodes": self.nodes, "seconds": round(self.seconds, 6),
            "truncated": self.truncated,
        }
        if self.raw_edges is not None:
            out["raw_edges"] = self.raw_edges
        if self.fetched is not None:
            out["fetched"] = self.fetched
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class ExecutionReport:
    stages: list = field(default_factory=list)
    fetch_count: int = 0
    wall_time: float = 0.0
    truncated: bool = False
    warnings: list = field(default_factory=list)
    backward_edges: int = 0
    final_edges: int = 0
    final_nodes: int = 0

    def as_json(self, timings: bool = True) -> dict:
        stages = [s.as_json() for s in self.stages]
        if not timings:
            for s in stages:
                s.pop("seconds", None)
        out = {
            "stages": stages, "fetch_count": self.fetch_count, "truncated": self.truncated,
            "warnings": list(self.warnings), "backward_edges": self.backward_edges,
            "final_edges": self.final_edges, "final_nodes": self.final_nodes,
        }
        if timings:
            out["wall_time"] = round(self.wall_time, 6)
        return out

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.as_json(timings), indent=2, sort_keys=True)

    def stage_edges(self, kind: str) -> list:
        return [s.edges for s in self.stages if s.kind == kind]


@dataclass
class Result:
    graph: ProvGraph
    report: ExecutionReport
    graphs: dict = field(default_factory=dict)  # named graphs of the last sub-query


class _SubQueryRun:
    def __init__(self, engine: "Engine", q: A.SubQuery, idx: int):
        self.engine = engine
        self.q = q
        self.idx = idx
        self.slots: dict = {}
        self.graphs: dict = {}
        self.unwound: dict = {}  # edge var -> graph name
        self.traversal_of: dict = {}  # graph name -> Traversal
        self.poi: Optional[POI] = None
        self.result: Optional[ProvGraph] = None
        self.pending: Optional[str] = None
        self.last_graph: Optional[str] = None
        self.node_binds: dict = {}  # node var -> ("src"|"dst", edge var)
        self.weighting = None

    def record(self, stage: int, kind: str, g: ProvGraph, started: float, **kw) -> StageRecord:
        rec = StageRecord(self.idx, stage, kind, len(g.edges), len(g.entities),
                          time.perf_counter() - started, **kw)
        self.engine.report.stages.append(rec)
        return rec

    def run(self) -> ProvGraph:
        store = self.engine.store
        started = time.perf_counter()
        try:
            self.poi = locate_poi(self.q.match, store)
        except ExecutionError as exc:
            exc.sub_query = self.idx
            raise
        self.slots.update(self.poi.bindings())
        poi_graph = ProvGraph(poi_node=self.poi.event.dst)
        for n in (self.poi.event.src, self.poi.event.dst):
            poi_graph.add_entity(store.entity(n))
        poi_graph.edges = [GraphEdge.from_event(self.poi.event)]
        self.record(-1, "poi", poi_graph, started, detail={"event": self.poi.event.id})
        for j, st in enumerate(self.q.stages):
            try:
                self.stage(j, st)
            except ExecutionError as exc:
                if exc.sub_query is None:
                    raise ExecutionError(str(exc), self.idx, j) from exc
                raise
            except EvalError as exc:
                raise ExecutionError(str(exc), self.idx, j) from exc
        if self.result is None:
            raise ExecutionError("sub-query returned nothing", self.idx)
        return self.result

    def graph_for_var(self, var: str) -> str:
        name = self.unwound.get(var)
        if name is None:
            raise ExecutionError(f"{var!r} is not an unwound edge variable")
        return name

    def stage(self, j: int, st) -> None:
        eng = self.engine
        cfg = eng.config
        started = time.perf_counter()
        if isinstance(st, A.Traverse):
            spec = st.spec
            plan = plan_traversal(spec)
            starts = _resolve_start(spec.start_var, self.slots)
            before = eng.store.fetch_count()
            seed = self.poi.event if spec.direction == "backward" else None
            g, tstats = traverse(eng.store, plan, starts, dict(self.slots), eng.limits, seed)
            if spec.direction == "backward":
                g.poi_node = self.poi.event.dst if self.poi.event.dst in starts else starts[0]
            else:
                g.poi_node = self.poi.event.dst if self.poi.event.dst in g.entities else None
            self.graphs[st.yield_name] = g
            self.traversal_of[st.yield_name] = spec
            self.slots[spec.edge_var] = GraphRef(st.yield_name)
            self.last_graph = st.yield_name
            if g.truncated:
                eng.report.truncated = True
                eng.report.warnings.append(f"sub-query {self.idx} stage {j}: traversal truncated")
            if spec.direction == "backward":
                eng.report.backward_edges += len(g.edges)
            self.record(j, f"{spec.direction}_{spec.algo}", g, started,
                        raw_edges=len(g.edges), fetched=eng.store.fetch_count() - before,
                        truncated=g.truncated,
                        detail={"expansions": tstats.expansions, "starts": len(starts)})
        elif isinstance(st, A.Unwind):
            if st.graph not in self.graphs:
                raise ExecutionError(f"unbound graph {st.graph!r}")
            raw = self.graphs[st.graph]
            merged = analytics.merge_parallel_edges(raw, cfg.merge_gap_ns)
            self.graphs[st.graph] = merged
            self.unwound[st.var] = st.graph
            self.record(j, "merge", merged, started, raw_edges=raw_event_count(raw))
        elif isinstance(st, A.SetWeight):
            self.set_weight(j, st, started)
        elif isinstance(st, A.Bind):
            b = st.match.binding()
            if b is None:
                raise ExecutionError("unsupported construct: pipeline MATCH must bind v = f(x)")
            var, expr = b
            if not (isinstance(expr, A.Call) and expr.name in ("src", "dst") and len(expr.args) == 1
                    and isinstance(expr.args[0], A.Var)):
                raise ExecutionError("unsupported construct: pipeline MATCH must be v = src(e) or dst(e)")
            edge_var = expr.args[0].name
            self.node_binds[var] = (expr.name, edge_var)
            if st.match.where is not None:
                raise ExecutionError("unsupported construct: WHERE on a pipeline MATCH")
        elif isinstance(st, A.SetRel):
            self.set_rel(j, st, started)
        elif isinstance(st, A.SetExpr):
            raise ExecutionError(f"unsupported construct: SET {st.var}.{st.prop} = <expression>")
        elif isinstance(st, A.WeightFilter):
            name = self.graph_for_var(st.var)
            g = self.graphs[name]
            before = len(g.edges)
            filtered = analytics.filter_by_weight(g, st.where, st.var, Binding(dict(self.slots), graphs=self.graphs))
            self.graphs[name] = filtered
            self.record(j, "weight_filter", filtered, started, raw_edges=raw_event_count(filtered),
                        detail={"before": before})
        elif isinstance(st, A.WithEntry):
            source = st.match.pattern.source if isinstance(st.match.pattern, A.IdIn) else None
            gname = self.last_graph
            if source is not None:
                for n in A.walk(source):
                    if isinstance(n, A.Var) and isinstance(self.slots.get(n.name), GraphRef):
                        gname = self.slots[n.name].name
            if gname is None or gname not in self.graphs:
                raise ExecutionError("entry selection needs a graph")
            g = self.graphs[gname]
            entries = select_entries(g, st.match, self.slots, self.graphs)
            self.slots[st.name] = entries
            sel = ProvGraph()
            for n in entries:
                sel.add_entity(g.entities[n.id])
            self.record(j, "entries", sel, started, detail={
                "graph": gname, "entries": [n.id for n in entries],
                "labels": [g.entities[n.id].key.label for n in entries],
            })
            if not entries:
                raise ExecutionError("no entries selected")
        elif isinstance(st, A.Return):
            if st.graph not in self.graphs:
                raise ExecutionError(f"unbound graph {st.graph!r}")
            g = self.graphs[st.graph]
            if self.pending is not None and self.result is not None:
                g = algebra.combine(self.pending, self.result, g)
                self.record(j, self.pending, g, started, raw_edges=raw_event_count(g))
                self.pending = None
            self.result = g
        elif isinstance(st, A.Combine):
            if self.result is None:
                raise ExecutionError(f"{st.op} before any RETURN")
            self.pending = st.op
        else:
            raise ExecutionError(f"unsupported construct: {type(st).__name__}")

    def _edge_context(self, edge_var: str) -> tuple:
        """(graph name, traversal edge var, step node var, step node expr) for an unwound var."""
        name = self.graph_for_var(edge_var)
        spec = self.traversal_of.get(name)
        if spec is None:
            return name, None, None, None
        b = spec.step.binding()
        return name, spec.edge_var, (b[0] if b else None), (b[1] if b else None)

    def set_weight(self, j: int, st: A.SetWeight, started: float) -> None:
        cfg = self.engine.config
        if st.prop != "weight":
            raise ExecutionError(f"unsupported construct: projection assigned to .{st.prop}")
        name, trav_var, node_var, node_expr = self._edge_context(st.var)
        g = self.graphs[name]
        edge_vars = [st.var] + ([trav_var] if trav_var else [])
        base = Binding(dict(self.slots), graphs=self.graphs)
        fm = analytics.compute_features(g, st.projection.features, base, edge_vars, node_var, node_expr)
        # the anchor edge is the reference point of the features, so it sits at
        # the guard extremes; it is projected but not used for fitting
        fit = None
        if self.poi is not None:
            fit = np.array([self.poi.event.id not in e.raw_ids for e in g.edges], dtype=bool)
            if fit.sum() < 2:
                fit = None
        res = analytics.assign_weights(g, fm, cfg.weight_normalization, cfg.seed, fit)
        self.graphs[name] = res.graph
        self.weighting = res
        self.record(j, "weights", res.graph, started, raw_edges=raw_event_count(res.graph),
                    detail={**res.summary(), "normalization": cfg.weight_normalization})

    def set_rel(self, j: int, st: A.SetRel, started: float) -> None:
        cfg = self.engine.config
        binds = self.node_binds
        if st.var not in binds:
            raise ExecutionError(f"{st.var!r} must be bound by MATCH {st.var} = src(e) first")
        _, edge_var = binds[st.var]
        name = self.graph_for_var(edge_var)
        g = self.graphs[name]
        if g.poi_node is None:
            raise ExecutionError("propagation needs a POI node in the graph")
        res = analytics.propagate(
            g, st.reduce, g.poi_node, st.var, cfg.epsilon, cfg.max_iters,
            Binding(dict(self.slots), graphs=self.graphs),
        )
        scored = g.copy()
        scored.scores = res.scores
        self.graphs[name] = scored
        if not res.converged:
            self.engine.report.warnings.append(
                f"sub-query {self.idx} stage {j}: propagation did not converge in {res.iterations} iterations"
            )
        self.record(j, "propagate", scored, started, detail={
            "iterations": res.iterations, "converged": res.converged, "residual": res.residual,
        })


def raw_event_count(g: ProvGraph) -> int:
    return sum(e.raw_count for e in g.edges)


class Engine:
    def __init__(self, store: EventStore, config: Optional[Config] = None):
        self.store = store
        self.config = config or Config()
        self.limits = Limits.from_config(self.config)
        self.report = ExecutionReport()

    def execute(self, ast: A.QueryAst) -> Result:
        errors = validate_ast(ast)
        if errors:
            raise ExecutionError("invalid query: " + "; ".join(str(e) for e in errors))
        self.report = ExecutionReport()
        self.store.reset_fetch_count()
        started = time.perf_counter()
        runs = []
        results = []
        for i, q in enumerate(ast.sub_queries):
            run = _SubQueryRun(self, q, i)
            results.append(run.run())
            runs.append(run)
        g = results[0]
        for op, other in zip(ast.merges, results[1:]):
            t0 = time.perf_counter()
            g = algebra.combine(op, g, other)
            self.report.stages.append(StageRecord(-1, -1, op, len(g.edges), len(g.entities),
                                                  time.perf_counter() - t0, raw_edges=raw_event_count(g)))
        self.report.fetch_count = self.store.fetch_count()
        self.report.wall_time = time.perf_counter() - started
        self.report.final_edges = len(g.edges)
        self.report.final_nodes = len(g.entities)
        return Result(g, self.report, runs[-1].graphs)


def execute(ast: A.QueryAst, store: EventStore, config: Optional[Config] = None) -> Result:
    return Engine(store, config).execute(ast)
