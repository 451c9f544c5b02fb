"""Expression evaluation over bindings and an adjacency view."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from .lang import ast as A
from .model import Entity, Event, GraphEdge, ProvGraph
from .store import canonical_attr

NEG_INF = float("-inf")
DIV_GUARD = 1e-4


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class NodeRef:
    id: int


@dataclass(frozen=True)
class GraphRef:
    name: str


class AdjacencyView(Protocol):
    def out(self, node: int) -> list: ...
    def in_(self, node: int) -> list: ...
    def entity(self, node: int) -> Optional[Entity]: ...
    def score(self, node: int) -> Optional[float]: ...


class GraphAdjacency:
    """Adjacency of a materialized :class:`ProvGraph`."""

    def __init__(self, g: ProvGraph, scores: Optional[dict] = None):
        self.graph = g
        self._out = g.out_edges()
        self._in = g.in_edges()
        self.scores = g.scores if scores is None else scores

    def out(self, node: int) -> list:
        return self._out.get(node, [])

    def in_(self, node: int) -> list:
        return self._in.get(node, [])

    def entity(self, node: int) -> Optional[Entity]:
        return self.graph.entities.get(node)

    def score(self, node: int) -> Optional[float]:
        return self.scores.get(node)

    def nodes(self) -> list:
        return sorted(self.graph.entities)


@dataclass
class Binding:
    slots: dict = field(default_factory=dict)
    adjacency: Optional[AdjacencyView] = None
    # edge id -> weight overrides, used while weights are being assigned
    weights: Optional[dict] = None
    graphs: dict = field(default_factory=dict)
    # caches aggregate results whose inputs do not involve ``volatile`` names
    memo: Optional[dict] = None
    volatile: frozenset = frozenset()

    def child(self, **extra) -> "Binding":
        slots = dict(self.slots)
        slots.update(extra)
        return Binding(slots, self.adjacency, self.weights, self.graphs, self.memo, self.volatile)

    def lookup(self, name: str):
        try:
            return self.slots[name]
        except KeyError:
            raise EvalError(f"unbound name {name!r}") from None


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _num(x, what: str):
    if not _is_num(x):
        raise EvalError(f"{what}: expected a number, got {type(x).__name__}")
    return x


def _finite_check(result, *operands):
    if isinstance(result, float):
        if result != result:
            raise EvalError("NaN result")
        if math.isinf(result) and all(not (isinstance(o, float) and math.isinf(o)) for o in operands):
            raise EvalError("non-finite result")
    return result


_EDGE_FIELDS = ("starttime", "endtime", "amount")


def edge_prop(edge, key: str, b: Binding):
    if key in _EDGE_FIELDS:
        return getattr(edge, key)
    if key == "id":
        return edge.id
    if key == "optype":
        return edge.optype.value
    if key == "raw_count":
        return edge.raw_count if isinstance(edge, GraphEdge) else 1
    if key == "weight":
        w = None
        if b.weights is not None:
            w = b.weights.get(_edge_key(edge))
        if w is None:
            w = getattr(edge, "weight", None)
        if w is None:
            raise EvalError(f"edge {edge.id} has no weight")
        return w
    if key == "host":
        return edge.host if isinstance(edge, Event) else ""
    raise EvalError(f"unknown edge property {key!r}")


def _edge_key(edge) -> tuple:
    if isinstance(edge, GraphEdge):
        return edge.raw_ids
    return (edge.id,)


def node_prop(node: NodeRef, key: str, b: Binding):
    if key == "id":
        return node.id
    adj = b.adjacency
    if key == "rel":
        s = adj.score(node.id) if adj is not None else None
        if s is None:
            raise EvalError(f"node {node.id} has no rel score")
        return s
    ent = adj.entity(node.id) if adj is not None else None
    if ent is None:
        raise EvalError(f"unknown node {node.id}")
    if key == "kind":
        return ent.kind.value
    value = ent.attrs.get(canonical_attr(key))
    if value is None:
        raise EvalError(f"node {node.id} has no attribute {key!r}")
    return value


def _adjacent(b: Binding, node, outgoing: bool) -> list:
    if not isinstance(node, NodeRef):
        raise EvalError(f"{'out' if outgoing else 'in'}() expects a node")
    if b.adjacency is None:
        raise EvalError("no adjacency view in this context")
    return list(b.adjacency.out(node.id) if outgoing else b.adjacency.in_(node.id))


def _is_edge(x) -> bool:
    return isinstance(x, (Event, GraphEdge))


def _call(e: A.Call, b: Binding):
    name = e.name
    if len(e.args) != 1:
        raise EvalError(f"{name}() takes one argument")
    arg = evaluate(e.args[0], b)
    if name == "count":
        if isinstance(arg, (list, tuple)):
            return len(arg)
        raise EvalError("count() expects a collection")
    if name in ("src", "dst"):
        if not _is_edge(arg):
            raise EvalError(f"{name}() expects an edge")
        return NodeRef(arg.src if name == "src" else arg.dst)
    if name == "out":
        return _adjacent(b, arg, True)
    if name == "in":
        return _adjacent(b, arg, False)
    if name == "abs":
        return abs(_num(arg, "abs"))
    if name == "ln":
        x = _num(arg, "ln")
        if x <= 0:
            x = 1
        return math.log(x)
    if name == "nodes":
        if isinstance(arg, GraphRef):
            g = b.graphs.get(arg.name)
            if g is None:
                raise EvalError(f"unknown graph {arg.name!r}")
            return [NodeRef(n) for n in sorted(g.entities)]
        raise EvalError("nodes() expects a graph variable")
    raise EvalError(f"unknown function {name!r}")


def _free_vars(expr, bound=frozenset()) -> frozenset:
    if isinstance(expr, A.Var):
        return frozenset() if expr.name in bound else frozenset([expr.name])
    if isinstance(expr, A.Collect):
        return _free_vars(expr.source, bound) | _free_vars(expr.body, bound | {expr.var})
    if isinstance(expr, A.Aggregate):
        return _free_vars(expr.collect, bound)
    if isinstance(expr, A.Reduce):
        return _free_vars(expr.source, bound) | _free_vars(expr.body, bound | {expr.acc, expr.var})
    out = frozenset()
    for child in _children(expr):
        out |= _free_vars(child, bound)
    return out


def _children(expr) -> tuple:
    if isinstance(expr, A.Prop):
        return (expr.base,)
    if isinstance(expr, A.Unary):
        return (expr.operand,)
    if isinstance(expr, (A.BinOp, A.Compare, A.Logical)):
        return (expr.left, expr.right)
    if isinstance(expr, A.Call):
        return expr.args
    return ()


_FREE_CACHE: dict = {}


def free_vars(expr) -> frozenset:
    key = id(expr)
    hit = _FREE_CACHE.get(key)
    if hit is None or hit[0] is not expr:
        hit = (expr, _free_vars(expr))
        _FREE_CACHE[key] = hit
    return hit[1]


def collect(c: A.Collect, b: Binding) -> list:
    source = evaluate(c.source, b)
    if not isinstance(source, (list, tuple)):
        raise EvalError("collect() source must be a collection")
    return [evaluate(c.body, b.child(**{c.var: x})) for x in source]


def eval_aggregate(fn: str, c: A.Collect, b: Binding):
    """max/min over a collected list; an empty collection yields ``-inf``."""
    values = collect(c, b)
    for v in values:
        _num(v, fn)
    if not values:
        return NEG_INF
    return max(values) if fn == "max" else min(values)


def _aggregate(e: A.Aggregate, b: Binding):
    if b.memo is None:
        return eval_aggregate(e.fn, e.collect, b)
    names = free_vars(e)
    if names & b.volatile:
        return eval_aggregate(e.fn, e.collect, b)
    key = (id(e),) + tuple((n, _memo_key(b.slots.get(n))) for n in sorted(names))
    if key not in b.memo:
        b.memo[key] = eval_aggregate(e.fn, e.collect, b)
    return b.memo[key]


def _memo_key(v):
    if _is_edge(v):
        return ("edge", _edge_key(v))
    return v


def _compare(op: str, x, y) -> bool:
    if _is_num(x) and _is_num(y):
        if isinstance(x, float) or isinstance(y, float):
            x, y = float(x), float(y)
    elif op in ("=", "<>"):
        if type(x) is not type(y):
            return op == "<>"
    elif not (isinstance(x, str) and isinstance(y, str)):
        raise EvalError(f"cannot order {type(x).__name__} and {type(y).__name__}")
    if op == "=":
        return x == y
    if op == "<>":
        return x != y
    if op == "<":
        return x < y
    if op == ">":
        return x > y
    if op == "<=":
        return x <= y
    return x >= y


def _divide(e: A.BinOp, x, y):
    if y == 0:
        denominator_is_count = isinstance(e.right, A.Call) and e.right.name == "count"
        y = 1 if denominator_is_count else DIV_GUARD
    return x / y


def evaluate(e, b: Binding):
    if isinstance(e, A.Literal):
        return e.value
    if isinstance(e, A.Var):
        return b.lookup(e.name)
    if isinstance(e, A.Prop):
        base = evaluate(e.base, b)
        if _is_edge(base):
            return edge_prop(base, e.key, b)
        if isinstance(base, NodeRef):
            return node_prop(base, e.key, b)
        raise EvalError(f"cannot read .{e.key} of {type(base).__name__}")
    if isinstance(e, A.BinOp):
        x = _num(evaluate(e.left, b), e.op)
        y = _num(evaluate(e.right, b), e.op)
        if e.op == "+":
            r = x + y
        elif e.op == "-":
            r = x - y
        elif e.op == "*":
            r = x * y
        else:
            r = _divide(e, x, y)
        return _finite_check(r, x, y)
    if isinstance(e, A.Compare):
        return _compare(e.op, evaluate(e.left, b), evaluate(e.right, b))
    if isinstance(e, A.Logical):
        left = evaluate(e.left, b)
        if not isinstance(left, bool):
            raise EvalError(f"{e.op.upper()} expects booleans")
        if e.op == "and" and not left:
            return False
        if e.op == "or" and left:
            return True
        right = evaluate(e.right, b)
        if not isinstance(right, bool):
            raise EvalError(f"{e.op.upper()} expects booleans")
        return right
    if isinstance(e, A.Unary):
        v = evaluate(e.operand, b)
        if e.op == "not":
            if not isinstance(v, bool):
                raise EvalError("NOT expects a boolean")
            return not v
        return -_num(v, "negation")
    if isinstance(e, A.Call):
        return _call(e, b)
    if isinstance(e, A.Aggregate):
        return _aggregate(e, b)
    if isinstance(e, A.Reduce):
        return eval_reduce(e, b)
    raise EvalError(f"cannot evaluate {type(e).__name__}")


def eval_reduce(r: A.Reduce, b: Binding):
    source = evaluate(r.source, b)
    if not isinstance(source, (list, tuple)):
        raise EvalError("reduce() source must be a collection")
    acc = r.init
    for x in source:
        acc = evaluate(r.body, b.child(**{r.acc: acc, r.var: x}))
    return acc


def eval_bool(e, b: Binding) -> bool:
    v = evaluate(e, b)
    if not isinstance(v, bool):
        raise EvalError("condition did not evaluate to a boolean")
    return v


def compile_feature(expr) -> Callable[[Binding], float]:
    """Return ``f(binding) -> float`` for a projection feature."""

    def run(b: Binding) -> float:
        v = _num(evaluate(expr, b), "feature")
        v = float(v)
        if not math.isfinite(v):
            raise EvalError("feature value is not finite")
        return v

    return run
