"""Canonical pretty-printer; ``parse_query(format_query(ast)) == ast``."""

from __future__ import annotations

from . import ast as A


def _literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        escaped = escaped.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
        return f'"{escaped}"'
    return repr(value)


def format_expr(e, top: bool = True) -> str:
    """Render ``e``; nested operators are parenthesized, the outermost is not."""
    text = _expr(e)
    if top and isinstance(e, (A.BinOp, A.Compare, A.Logical)):
        return text[1:-1]
    return text


def _expr(e) -> str:
    if isinstance(e, A.Literal):
        return _literal(e.value)
    if isinstance(e, A.Var):
        return e.name
    if isinstance(e, A.Prop):
        base = _expr(e.base)
        if not isinstance(e.base, (A.Var, A.Prop, A.Call, A.Aggregate)):
            base = f"({base})"
        return f"{base}.{e.key}"
    if isinstance(e, A.Unary):
        if e.op == "not":
            return f"NOT ({format_expr(e.operand)})"
        return f"-({format_expr(e.operand)})"
    if isinstance(e, (A.BinOp, A.Compare)):
        return f"({_expr(e.left)} {e.op} {_expr(e.right)})"
    if isinstance(e, A.Logical):
        return f"({_expr(e.left)} {e.op.upper()} {_expr(e.right)})"
    if isinstance(e, A.Call):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, A.Collect):
        return f"collect({e.var} IN {format_expr(e.source)} | {format_expr(e.body)})"
    if isinstance(e, A.Aggregate):
        return f"{e.fn}({format_expr(e.collect)})"
    if isinstance(e, A.Projection):
        return f"projection({', '.join(format_expr(f) for f in e.features)})"
    if isinstance(e, A.Reduce):
        return (f"reduce({e.acc} = {_literal(e.init)}, {e.var} IN {format_expr(e.source)} "
                f"| {format_expr(e.body)})")
    raise TypeError(f"not an expression: {e!r}")


def _props(props) -> str:
    if not props:
        return ""
    return "{" + ", ".join(f"{k}:{_literal(v)}" for k, v in props) + "}"


def _node(n: A.NodePattern) -> str:
    label = f":{n.label}" if n.label else ""
    return f"({n.var or ''}{label}{_props(n.props)})"


def _path(p: A.PathPattern) -> str:
    e = p.edge
    label = f":{e.label}" if e.label else ""
    body = f"[{e.var or ''}{label}{_props(e.props)}]"
    if e.direction == "->":
        return f"{_node(p.left)}-{body}->{_node(p.right)}"
    return f"{_node(p.left)}<-{body}-{_node(p.right)}"


def format_match(m: A.MatchClause) -> str:
    if m.is_path:
        head = ", ".join(_path(p) for p in m.pattern)  # type: ignore[union-attr]
    elif isinstance(m.pattern, A.IdIn):
        head = f"{m.pattern.var} IN {format_expr(m.pattern.source)}"
    else:
        head = format_expr(m.pattern)
    out = f"MATCH {head}"
    if m.where is not None:
        out += f" WHERE {format_expr(m.where)}"
        if m.order:
            items = []
            for it in m.order:
                suffix = f" {it.direction.upper()}" if it.direction else ""
                items.append(format_expr(it.expr) + suffix)
            out += " ORDER BY " + ", ".join(items)
        if m.limit is not None:
            out += f" LIMIT {m.limit}"
    return out


def format_stage(s) -> str:
    if isinstance(s, A.Traverse):
        t = s.spec
        return (f"{t.algo.upper()} ({t.edge_var} IN {t.direction}({t.start_var}) | "
                f"{format_match(t.step)}) YIELD {s.yield_name}")
    if isinstance(s, A.Unwind):
        return f"UNWIND {s.graph} AS {s.var}"
    if isinstance(s, A.Bind):
        return format_match(s.match)
    if isinstance(s, A.SetWeight):
        return f"SET {s.var}.{s.prop} = {format_expr(s.projection)}"
    if isinstance(s, A.SetRel):
        return f"SET {s.var}.{s.prop} = {format_expr(s.reduce)}"
    if isinstance(s, A.SetExpr):
        return f"SET {s.var}.{s.prop} = {format_expr(s.value)}"
    if isinstance(s, A.WithEntry):
        return f"WITH {s.name} = ({format_match(s.match)})"
    if isinstance(s, A.WeightFilter):
        return f"WITH {s.var} WHERE {format_expr(s.where)}"
    if isinstance(s, A.Return):
        return f"RETURN {s.graph}"
    if isinstance(s, A.Combine):
        return s.op.upper()
    raise TypeError(f"not a stage: {s!r}")


def format_subquery(q: A.SubQuery) -> str:
    lines = [format_match(q.match)]
    lines.extend("  " + format_stage(s) for s in q.stages)
    return "\n".join(lines)


def format_query(ast: A.QueryAst) -> str:
    parts = [format_subquery(ast.sub_queries[0])]
    for op, sub in zip(ast.merges, ast.sub_queries[1:]):
        parts.append(op.upper())
        parts.append("(" + format_subquery(sub) + ")")
    return "\n".join(parts) + ";\n"
