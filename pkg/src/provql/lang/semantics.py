"""Static checks run after parsing and before execution."""

from __future__ import annotations

from dataclasses import dataclass

from . import ast as A

FUNCTIONS = {"count": 1, "dst": 1, "src": 1, "out": 1, "in": 1, "abs": 1, "ln": 1, "nodes": 1}
_ORDERING = ("<", ">", "<=", ">=")


@dataclass(frozen=True)
class SemanticError:
    message: str
    where: str = ""

    def __str__(self) -> str:
        return f"{self.where}: {self.message}" if self.where else self.message


class _Checker:
    def __init__(self):
        self.errors: list[SemanticError] = []

    def err(self, msg: str, where: str):
        self.errors.append(SemanticError(msg, where))

    def expr(self, e, scope: set, where: str, aggregates: bool = True):
        if e is None:
            return
        if isinstance(e, A.Var):
            if e.name not in scope:
                self.err(f"unbound variable {e.name!r}", where)
        elif isinstance(e, A.Prop):
            self.expr(e.base, scope, where, aggregates)
        elif isinstance(e, A.Unary):
            self.expr(e.operand, scope, where, aggregates)
        elif isinstance(e, (A.BinOp, A.Logical)):
            self.expr(e.left, scope, where, aggregates)
            self.expr(e.right, scope, where, aggregates)
        elif isinstance(e, A.Compare):
            if e.op in _ORDERING:
                for side in (e.left, e.right):
                    if isinstance(side, A.Literal) and isinstance(side.value, (str, bool)):
                        self.err(f"operand of {e.op} must be numeric", where)
            self.expr(e.left, scope, where, aggregates)
            self.expr(e.right, scope, where, aggregates)
        elif isinstance(e, A.Call):
            arity = FUNCTIONS.get(e.name)
            if arity is None:
                self.err(f"unknown function {e.name!r}", where)
            elif len(e.args) != arity:
                self.err(f"{e.name} takes {arity} argument(s), got {len(e.args)}", where)
            for a in e.args:
                self.expr(a, scope, where, aggregates)
        elif isinstance(e, A.Aggregate):
            if not aggregates:
                self.err(f"aggregate {e.fn}() not allowed here", where)
            c = e.collect
            self.expr(c.source, scope, where, aggregates)
            self.expr(c.body, scope | {c.var}, where, aggregates)

    def match(self, m: A.MatchClause, scope: set, where: str) -> set:
        """Check ``m`` and return the variables it binds."""
        bound: set = set()
        p = m.pattern
        if m.is_path:
            for part in p:  # type: ignore[union-attr]
                for name in (part.left.var, part.edge.var, part.right.var):
                    if name:
                        bound.add(name)
        elif isinstance(p, A.IdIn):
            self.expr(p.source, scope, where, aggregates=False)
            bound.add(p.var)
        else:
            b = m.binding()
            if b is None:
                self.err("MATCH expression must bind a variable (v = f(x))", where)
            else:
                self.expr(b[1], scope, where, aggregates=False)
                bound.add(b[0])
        inner = scope | bound
        self.expr(m.where, inner, where)
        for item in m.order:
            self.expr(item.expr, inner, where)
        if m.limit is not None and m.limit <= 0:
            self.err("LIMIT must be positive", where)
        if (m.order or m.limit is not None) and m.where is None:
            self.err("ORDER BY/LIMIT require WHERE", where)
        return bound

    def subquery(self, q: A.SubQuery, idx: int):
        tag = f"sub-query {idx}"
        scope = set(self.match(q.match, set(), f"{tag} MATCH"))
        graphs: set = set()
        for j, st in enumerate(q.stages):
            where = f"{tag} stage {j}"
            if isinstance(st, A.Traverse):
                t = st.spec
                if t.start_var not in scope:
                    self.err(f"unbound start node {t.start_var!r}", where)
                inner = scope | {t.edge_var}
                bound = self.match(t.step, inner, where)
                scope |= bound | {t.edge_var}
                graphs.add(st.yield_name)
            elif isinstance(st, A.Unwind):
                if st.graph not in graphs:
                    self.err(f"unbound graph {st.graph!r}", where)
                scope.add(st.var)
            elif isinstance(st, A.Bind):
                scope |= self.match(st.match, scope, where)
            elif isinstance(st, A.SetWeight):
                if st.var not in scope:
                    self.err(f"unbound variable {st.var!r}", where)
                if not st.projection.features:
                    self.err("projection needs at least one feature", where)
                for f in st.projection.features:
                    self.expr(f, scope, where)
            elif isinstance(st, A.SetRel):
                if st.var not in scope:
                    self.err(f"unbound variable {st.var!r}", where)
                r = st.reduce
                self.expr(r.source, scope, where)
                self.expr(r.body, scope | {r.acc, r.var}, where)
            elif isinstance(st, A.SetExpr):
                if st.var not in scope:
                    self.err(f"unbound variable {st.var!r}", where)
                self.expr(st.value, scope, where)
            elif isinstance(st, A.WithEntry):
                self.match(st.match, scope, where)
                scope.add(st.name)
            elif isinstance(st, A.WeightFilter):
                if st.var not in scope:
                    self.err(f"unbound variable {st.var!r}", where)
                self.expr(st.where, scope, where)
            elif isinstance(st, A.Return):
                if st.graph not in graphs:
                    self.err(f"unbound graph {st.graph!r}", where)
        if not q.stages or not isinstance(q.stages[-1], A.Return):
            self.err("sub-query must end with RETURN", tag)


def validate_ast(ast: A.QueryAst) -> list[SemanticError]:
    """Return every semantic problem found; an empty list means the query is valid."""
    checker = _Checker()
    for i, q in enumerate(ast.sub_queries):
        checker.subquery(q, i)
    return checker.errors
