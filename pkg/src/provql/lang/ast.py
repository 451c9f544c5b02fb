"""Query syntax tree.

All nodes are frozen dataclasses so that two parses of the same text compare
equal; source positions are kept out of equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union


# --- expressions ------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Union[int, float, str, bool]


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Prop:
    base: "Expr"
    key: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "not"
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # = <> < > <= >=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Logical:
    op: str  # "and" / "or"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str  # lower-cased
    args: tuple


@dataclass(frozen=True)
class Collect:
    var: str
    source: "Expr"
    body: "Expr"


@dataclass(frozen=True)
class Aggregate:
    fn: str  # "max" / "min"
    collect: Collect


@dataclass(frozen=True)
class Projection:
    features: tuple


@dataclass(frozen=True)
class Reduce:
    acc: str
    init: Union[int, float]
    var: str
    source: "Expr"
    body: "Expr"


Expr = Union[Literal, Var, Prop, Unary, BinOp, Compare, Logical, Call, Aggregate]


def walk(expr):
    """Yield ``expr`` and every sub-expression, depth first."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Prop):
            stack.append(node.base)
        elif isinstance(node, Unary):
            stack.append(node.operand)
        elif isinstance(node, (BinOp, Compare, Logical)):
            stack.extend((node.right, node.left))
        elif isinstance(node, Call):
            stack.extend(reversed(node.args))
        elif isinstance(node, Aggregate):
            stack.append(node.collect)
        elif isinstance(node, Collect):
            stack.extend((node.body, node.source))
        elif isinstance(node, Projection):
            stack.extend(reversed(node.features))
        elif isinstance(node, Reduce):
            stack.extend((node.body, node.source))
        elif isinstance(node, IdIn):
            stack.append(node.source)


def conjuncts(expr) -> list:
    if isinstance(expr, Logical) and expr.op == "and":
        return conjuncts(expr.left) + conjuncts(expr.right)
    return [expr]


# --- patterns and clauses -------------------------------------------------------


@dataclass(frozen=True)
class NodePattern:
    var: Optional[str]
    label: Optional[str]
    props: tuple = ()  # ((key, value), ...)


@dataclass(frozen=True)
class EdgePattern:
    var: Optional[str]
    label: Optional[str]
    props: tuple = ()
    direction: str = "->"


@dataclass(frozen=True)
class PathPattern:
    left: NodePattern
    edge: EdgePattern
    right: NodePattern

    @property
    def source(self) -> NodePattern:
        return self.left if self.edge.direction == "->" else self.right

    @property
    def sink(self) -> NodePattern:
        return self.right if self.edge.direction == "->" else self.left


@dataclass(frozen=True)
class IdIn:
    var: str
    source: "Expr"


@dataclass(frozen=True)
class SortItem:
    expr: "Expr"
    direction: Optional[str] = None  # "asc" / "desc" / None

    @property
    def descending(self) -> bool:
        return self.direction == "desc"


@dataclass(frozen=True)
class MatchClause:
    pattern: Union[tuple, IdIn, "Expr"]  # tuple of PathPattern for edge patterns
    where: Optional["Expr"] = None
    order: tuple = ()
    limit: Optional[int] = None

    @property
    def is_path(self) -> bool:
        return isinstance(self.pattern, tuple)

    def binding(self) -> Optional[tuple]:
        """``(var, expr)`` when the clause has the node-binding form ``v = f(x)``."""
        p = self.pattern
        if isinstance(p, Compare) and p.op == "=" and isinstance(p.left, Var):
            return p.left.name, p.right
        return None


# --- pipeline stages --------------------------------------------------------------


@dataclass(frozen=True)
class Traversal:
    algo: str  # "bfs" / "dfs"
    edge_var: str
    direction: str  # "backward" / "forward"
    start_var: str
    step: MatchClause


@dataclass(frozen=True)
class Traverse:
    spec: Traversal
    yield_name: str


@dataclass(frozen=True)
class Unwind:
    graph: str
    var: str


@dataclass(frozen=True)
class Bind:
    """A MATCH inside a pipeline, e.g. ``MATCH u=src(e)`` before a SET."""

    match: MatchClause


@dataclass(frozen=True)
class SetWeight:
    var: str
    prop: str
    projection: Projection


@dataclass(frozen=True)
class SetRel:
    var: str
    prop: str
    reduce: Reduce


@dataclass(frozen=True)
class SetExpr:
    var: str
    prop: str
    value: "Expr"


@dataclass(frozen=True)
class WithEntry:
    name: str
    match: MatchClause


@dataclass(frozen=True)
class WeightFilter:
    var: str
    where: "Expr"


@dataclass(frozen=True)
class Return:
    graph: str


@dataclass(frozen=True)
class Combine:
    op: str  # "union" / "intersect"


Stage = Union[Traverse, Unwind, Bind, SetWeight, SetRel, SetExpr, WithEntry, WeightFilter,
              Return, Combine]


@dataclass(frozen=True)
class SubQuery:
    match: MatchClause
    stages: tuple = ()


@dataclass(frozen=True)
class QueryAst:
    sub_queries: tuple
    merges: tuple = ()
    source: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        if len(self.merges) != len(self.sub_queries) - 1:
            raise ValueError("need exactly one merge operator between sub-queries")
