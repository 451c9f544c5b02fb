from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provql import catalog
from provql.lang import (
    LexError, ParseError, QueryError, format_expr, format_query, parse_expr, parse_query,
    tokenize, validate_ast,
)
from provql.lang import ast as A


@pytest.mark.parametrize("name", sorted(catalog.ALL))
def test_reference_queries_parse_and_validate(name):
    q = parse_query(catalog.ALL[name])
    assert validate_ast(q) == []
    assert len(q.merges) == len(q.sub_queries) - 1


@pytest.mark.parametrize("name", sorted(catalog.ALL))
def test_print_then_parse_is_identity(name):
    q = parse_query(catalog.ALL[name])
    text = format_query(q)
    assert parse_query(text) == q
    assert format_query(parse_query(text)) == text


def test_password_crack_shape():
    q = parse_query(catalog.PASSWORD_CRACK)
    assert list(q.merges) == ["union"]
    kinds = [type(s).__name__ for s in q.sub_queries[0].stages]
    assert kinds[0] == "Traverse" and "SetWeight" in kinds and "SetRel" in kinds
    assert "WithEntry" in kinds
    first = q.sub_queries[0].stages[0].spec
    assert (first.algo, first.direction, first.start_var, first.edge_var) == ("bfs", "backward", "f", "r")
    entry = next(s for s in q.sub_queries[0].stages if isinstance(s, A.WithEntry))
    assert entry.match.limit == 15


def test_weight_filter_clause():
    q = parse_query(catalog.WEIGHT_FILTER)
    wf = [s for s in q.sub_queries[0].stages if isinstance(s, A.WeightFilter)]
    assert len(wf) == 1
    assert wf[0].where == A.Compare(">=", A.Prop(A.Var(wf[0].var), "weight"), A.Literal(0.5))


def test_keywords_case_insensitive():
    lower = catalog.PASSWORD_CRACK.replace("MATCH", "match").replace("RETURN", "return").replace("BFS", "bfs")
    assert parse_query(lower) == parse_query(catalog.PASSWORD_CRACK)


def test_lex_error_position():
    with pytest.raises(LexError) as info:
        tokenize('MATCH (a) $ RETURN')
    assert info.value.position == 10


@pytest.mark.parametrize("text", [
    "MATCH (p)-[e]->(f) RETURN",
    "MATCH (p)-[e]->(f) BFS (r IN sideways(f) | MATCH v=dst(r)) YIELD g RETURN g",
    "MATCH (p)-[e]->(f) WITH entry = (MATCH n in nodes(r) LIMIT 0) RETURN g",
    "",
])
def test_syntax_errors(text):
    with pytest.raises(ParseError):
        parse_query(text)


def test_semantic_errors_reported():
    text = """MATCH (p)-[st]->(f)
    BFS (r IN backward(f) | MATCH v=dst(r) WHERE r.starttime < zz.endtime) YIELD g1
    RETURN g2"""
    errors = validate_ast(parse_query(text))
    messages = " ".join(str(e) for e in errors)
    assert "zz" in messages and "g2" in messages


# --- generated expressions ---------------------------------------------------------

names = st.sampled_from(["a", "b", "r", "v"])
keys = st.sampled_from(["starttime", "endtime", "amount", "rel", "weight"])
literals = st.one_of(st.integers(0, 10**12), st.integers(0, 64).map(lambda k: k / 4)).map(A.Literal)
atoms = st.one_of(literals, names.map(A.Var), st.builds(A.Prop, names.map(A.Var), keys))


def _grow(children):
    return st.one_of(
        st.builds(A.BinOp, st.sampled_from("+-*/"), children, children),
        st.builds(lambda x: A.Call("abs", (x,)), children),
        st.builds(lambda x: A.Call("ln", (x,)), children),
        st.builds(lambda v, k: A.Aggregate("max", A.Collect("o", A.Call("out", (A.Var(v),)), A.Prop(A.Var("o"), k))),
                  names, keys),
    )


numeric = st.recursive(atoms, _grow, max_leaves=8)
comparisons = st.builds(A.Compare, st.sampled_from(["=", "<>", "<", ">", "<=", ">="]), numeric, numeric)
conditions = st.recursive(
    comparisons,
    lambda c: st.one_of(st.builds(A.Logical, st.sampled_from(["and", "or"]), c, c), c.map(lambda x: A.Unary("not", x))),
    max_leaves=4,
)


@settings(max_examples=200, deadline=None)
@given(expr=st.one_of(numeric, conditions))
def test_expression_round_trip(expr):
    assert parse_expr(format_expr(expr)) == expr


@settings(max_examples=300, deadline=None)
@given(text=st.text(alphabet=st.sampled_from(list("MATCHbfs()[]{}-><=|:;,.'\"0123456789 \nxyUNIO")), max_size=80))
def test_garbage_only_raises_query_errors(text):
    try:
        parse_query(text)
    except QueryError as exc:
        assert 0 <= exc.position <= len(text)


@settings(max_examples=100, deadline=None)
@given(cut=st.integers(1, len(catalog.PASSWORD_CRACK) - 1))
def test_truncated_query_fails_cleanly(cut):
    text = catalog.PASSWORD_CRACK[:cut]
    try:
        q = parse_query(text)
    except QueryError:
        return
    # some prefixes are themselves complete queries
    assert isinstance(q, A.QueryAst)
