"""Recursive-descent parser producing :class:`~provql.lang.ast.QueryAst`.

Program layout::

    program   := part ((UNION | INTERSECT) part)* ';'?
    part      := '(' subquery ')' | subquery
    subquery  := MATCH match stage*
    stage     := (BFS | DFS) '(' var IN (BACKWARD | FORWARD) '(' var ')' '|' MATCH match ')'
                     YIELD var
               | (UNWIND | UWIND) var AS var
               | SET item (',' item)*
               | MATCH match
               | WITH var '=' '(' MATCH match ')'
               | WITH var WHERE expr
               | (UNION | INTERSECT) <followed by WITH>
               | RETURN var

Expressions use the usual precedence (OR < AND < NOT < comparison < + - < * /).
"""

from __future__ import annotations

from typing import Optional

from . import ast as A
from .lexer import LexError, QueryError, Token, tokenize

MAX_DEPTH = 200
AGGREGATES = ("max", "min")


class ParseError(QueryError):
    def __init__(self, message: str, position: int, expected=()):
        super().__init__(message, position)
        self.expected = tuple(sorted(set(expected)))


class _Parser:
    def __init__(self, tokens: list[Token], length: int):
        self.toks = tokens
        self.i = 0
        self.end = length
        self.depth = 0
        # alternatives probed at the current position, for error messages
        self.tried: set = set()
        self.tried_at = -1

    # -- token helpers

    def peek(self, k: int = 0) -> Optional[Token]:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, *kinds: str, k: int = 0) -> bool:
        tok = self.peek(k)
        return tok is not None and tok.kind in kinds

    def pos(self) -> int:
        tok = self.peek()
        return self.end if tok is None else tok.pos

    def fail(self, expected) -> ParseError:
        if self.tried_at == self.i:
            expected = set(expected) | self.tried
        tok = self.peek()
        found = "end of input" if tok is None else repr(tok)
        want = ", ".join(sorted(set(expected)))
        return ParseError(f"expected {want} but found {found}", self.pos(), expected)

    def expect(self, *kinds: str) -> Token:
        tok = self.peek()
        if tok is None or tok.kind not in kinds:
            raise self.fail(kinds)
        self.i += 1
        return tok

    def accept(self, *kinds: str) -> Optional[Token]:
        if self.at(*kinds):
            tok = self.toks[self.i]
            self.i += 1
            return tok
        if self.tried_at != self.i:
            self.tried, self.tried_at = set(), self.i
        self.tried.update(kinds)
        return None

    def ident(self) -> str:
        return self.expect("IDENT").value  # type: ignore[return-value]

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ParseError("expression nested too deeply", self.pos())

    def leave(self):
        self.depth -= 1

    # -- program

    def program(self) -> A.QueryAst:
        parts = [self.part()]
        merges = []
        while self.at("UNION", "INTERSECT"):
            merges.append(self.expect("UNION", "INTERSECT").kind.lower())
            parts.append(self.part())
        self.accept("SEMI")
        if self.peek() is not None:
            raise self.fail(["UNION", "INTERSECT", "SEMI", "end of input"])
        return A.QueryAst(tuple(parts), tuple(merges))

    def part(self) -> A.SubQuery:
        if self.at("LPAREN") and self.at("MATCH", k=1):
            self.expect("LPAREN")
            sub = self.subquery()
            self.expect("RPAREN")
            return sub
        return self.subquery()

    def subquery(self) -> A.SubQuery:
        self.expect("MATCH")
        match = self.match_clause()
        stages: list = []
        while True:
            stage = self.stage()
            if stage is None:
                break
            stages.extend(stage)
        return A.SubQuery(match, tuple(stages))

    def stage(self) -> Optional[list]:
        tok = self.peek()
        if tok is None:
            return None
        kind = tok.kind
        if kind in ("BFS", "DFS"):
            spec = self.traversal()
            self.expect("YIELD")
            return [A.Traverse(spec, self.ident())]
        if kind in ("UNWIND", "UWIND"):
            self.i += 1
            graph = self.ident()
            self.expect("AS")
            return [A.Unwind(graph, self.ident())]
        if kind == "SET":
            self.i += 1
            items = [self.set_item()]
            while self.accept("COMMA"):
                items.append(self.set_item())
            return items
        if kind == "MATCH":
            self.i += 1
            return [A.Bind(self.match_clause())]
        if kind == "WITH":
            return [self.with_stage()]
        if kind == "RETURN":
            self.i += 1
            return [A.Return(self.ident())]
        if kind in ("UNION", "INTERSECT") and self.at("WITH", k=1):
            self.i += 1
            return [A.Combine(kind.lower())]
        return None

    def traversal(self) -> A.Traversal:
        algo = self.expect("BFS", "DFS").kind.lower()
        self.expect("LPAREN")
        edge_var = self.ident()
        self.expect("IN")
        direction = self.expect("BACKWARD", "FORWARD").kind.lower()
        self.expect("LPAREN")
        start = self.ident()
        self.expect("RPAREN")
        self.expect("PIPE")
        self.expect("MATCH")
        step = self.match_clause()
        self.expect("RPAREN")
        return A.Traversal(algo, edge_var, direction, start, step)

    def with_stage(self):
        self.expect("WITH")
        name = self.ident()
        if self.accept("EQ"):
            self.expect("LPAREN")
            self.expect("MATCH")
            match = self.match_clause()
            self.expect("RPAREN")
            return A.WithEntry(name, match)
        if self.accept("WHERE"):
            return A.WeightFilter(name, self.expr())
        raise self.fail(["EQ", "WHERE"])

    def set_item(self):
        target = self.postfix()
        if not (isinstance(target, A.Prop) and isinstance(target.base, A.Var)):
            raise ParseError("SET target must be var.property", self.pos(), ["IDENT"])
        self.expect("EQ")
        var, prop = target.base.name, target.key
        if self.at("PROJECTION"):
            return A.SetWeight(var, prop, self.projection())
        if self.at("REDUCE"):
            return A.SetRel(var, prop, self.reduce())
        return A.SetExpr(var, prop, self.expr())

    def projection(self) -> A.Projection:
        self.expect("PROJECTION")
        self.expect("LPAREN")
        feats = []
        while not self.at("RPAREN"):
            feats.append(self.expr())
            if not self.accept("COMMA"):
                break
        self.expect("RPAREN")
        return A.Projection(tuple(feats))

    def reduce(self) -> A.Reduce:
        self.expect("REDUCE")
        self.expect("LPAREN")
        acc = self.ident()
        self.expect("EQ")
        neg = self.accept("MINUS") is not None
        init = self.expect("INT", "FLOAT").value
        init = -init if neg else init  # type: ignore[operator]
        self.expect("COMMA")
        var = self.ident()
        self.expect("IN")
        source = self.expr()
        self.expect("PIPE")
        body = self.expr()
        self.expect("RPAREN")
        return A.Reduce(acc, init, var, source, body)  # type: ignore[arg-type]

    # -- match clauses

    def match_clause(self) -> A.MatchClause:
        if self._pattern_ahead():
            parts = [self.path_pattern()]
            while self.accept("COMMA"):
                parts.append(self.path_pattern())
            pattern = tuple(parts)
        elif self.at("IDENT") and self.at("IN", k=1):
            var = self.ident()
            self.expect("IN")
            pattern = A.IdIn(var, self.expr())
        else:
            pattern = self.expr()
        where = None
        order: tuple = ()
        limit = None
        if self.accept("WHERE"):
            where = self.expr()
            if self.accept("ORDER"):
                self.expect("BY")
                items = [self.sort_item()]
                while self.accept("COMMA"):
                    items.append(self.sort_item())
                order = tuple(items)
            if self.accept("LIMIT"):
                limit = self.expect("INT").value
        return A.MatchClause(pattern, where, order, limit)  # type: ignore[arg-type]

    def sort_item(self) -> A.SortItem:
        expr = self.expr()
        tok = self.accept("ASC", "DESC")
        return A.SortItem(expr, tok.kind.lower() if tok else None)

    def _pattern_ahead(self) -> bool:
        if not self.at("LPAREN"):
            return False
        if self.at("COLON", k=1):
            return True
        if self.at("IDENT", k=1):
            if self.at("COLON", "LBRACE", k=2):
                return True
            if self.at("RPAREN", k=2) and self.at("MINUS", "LARROW", k=3):
                return True
        return self.at("RPAREN", k=1)

    def node_pattern(self) -> A.NodePattern:
        self.expect("LPAREN")
        var = self.accept("IDENT")
        label = None
        if self.accept("COLON"):
            label = self.ident()
        props = self.props() if self.at("LBRACE") else ()
        self.expect("RPAREN")
        return A.NodePattern(var.value if var else None, label, props)  # type: ignore[arg-type]

    def edge_body(self, direction: str) -> A.EdgePattern:
        self.expect("LBRACKET")
        var = self.accept("IDENT")
        label = None
        if self.accept("COLON"):
            label = self.ident()
        props = self.props() if self.at("LBRACE") else ()
        self.expect("RBRACKET")
        return A.EdgePattern(var.value if var else None, label, props, direction)  # type: ignore[arg-type]

    def path_pattern(self) -> A.PathPattern:
        left = self.node_pattern()
        if self.accept("LARROW"):
            edge = self.edge_body("<-")
            self.expect("MINUS")
        else:
            self.expect("MINUS")
            edge = self.edge_body("->")
            self.expect("ARROW")
        right = self.node_pattern()
        return A.PathPattern(left, edge, right)

    def props(self) -> tuple:
        self.expect("LBRACE")
        items = []
        if not self.at("RBRACE"):
            while True:
                tok = self.peek()
                if tok is None or not (tok.kind == "IDENT" or tok.kind.isalpha()):
                    raise self.fail(["IDENT"])
                self.i += 1
                self.expect("COLON")
                items.append((str(tok.value), self.literal_value()))
                if not self.accept("COMMA"):
                    break
        self.expect("RBRACE")
        return tuple(items)

    def literal_value(self):
        neg = self.accept("MINUS") is not None
        tok = self.expect("INT", "FLOAT", "STRING") if not neg else self.expect("INT", "FLOAT")
        return -tok.value if neg else tok.value  # type: ignore[operator]

    # -- expressions

    def expr(self):
        self.enter()
        try:
            left = self.and_expr()
            while self.accept("OR"):
                left = A.Logical("or", left, self.and_expr())
            return left
        finally:
            self.leave()

    def and_expr(self):
        left = self.not_expr()
        while self.accept("AND"):
            left = A.Logical("and", left, self.not_expr())
        return left

    def not_expr(self):
        if self.accept("NOT"):
            self.enter()
            try:
                return A.Unary("not", self.not_expr())
            finally:
                self.leave()
        return self.comparison()

    _CMP = {"EQ": "=", "NEQ": "<>", "LT": "<", "GT": ">", "LE": "<=", "GE": ">="}

    def comparison(self):
        left = self.additive()
        result = None
        while self.at(*self._CMP):
            op = self._CMP[self.toks[self.i].kind]
            self.i += 1
            right = self.additive()
            cmp = A.Compare(op, left, right)
            result = cmp if result is None else A.Logical("and", result, cmp)
            left = right
        return left if result is None else result

    def additive(self):
        left = self.term()
        while self.at("PLUS", "MINUS"):
            op = self.toks[self.i].value
            self.i += 1
            left = A.BinOp(op, left, self.term())  # type: ignore[arg-type]
        return left

    def term(self):
        left = self.unary()
        while self.at("STAR", "SLASH"):
            op = self.toks[self.i].value
            self.i += 1
            left = A.BinOp(op, left, self.unary())  # type: ignore[arg-type]
        return left

    def unary(self):
        if self.accept("MINUS"):
            self.enter()
            try:
                operand = self.unary()
            finally:
                self.leave()
            if isinstance(operand, A.Literal) and isinstance(operand.value, (int, float)) \
                    and not isinstance(operand.value, bool):
                return A.Literal(-operand.value)
            return A.Unary("-", operand)
        return self.postfix()

    def postfix(self):
        node = self.atom()
        while self.accept("DOT"):
            tok = self.peek()
            if tok is None or not (tok.kind == "IDENT" or tok.kind.isalpha()):
                raise self.fail(["IDENT"])
            self.i += 1
            node = A.Prop(node, str(tok.value))
        return node

    def atom(self):
        tok = self.peek()
        if tok is None:
            raise self.fail(["expression"])
        if tok.kind in ("INT", "FLOAT", "STRING"):
            self.i += 1
            return A.Literal(tok.value)  # type: ignore[arg-type]
        if tok.kind == "LPAREN":
            self.i += 1
            inner = self.expr()
            self.expect("RPAREN")
            return inner
        if tok.kind == "IN" and self.at("LPAREN", k=1):
            self.i += 1
            return A.Call("in", self.call_args())
        if tok.kind in ("PROJECTION", "REDUCE"):
            raise ParseError(f"{tok.kind.lower()} is only allowed as a SET value", tok.pos,
                             ["expression"])
        if tok.kind == "IDENT":
            self.i += 1
            name = str(tok.value)
            lower = name.lower()
            if lower in ("true", "false") and not self.at("LPAREN"):
                return A.Literal(lower == "true")
            if not self.at("LPAREN"):
                return A.Var(name)
            if lower in AGGREGATES and self.at("IDENT", k=1) \
                    and str(self.peek(1).value).lower() == "collect":  # type: ignore[union-attr]
                self.expect("LPAREN")
                self.i += 1
                coll = self.collect_body()
                self.expect("RPAREN")
                return A.Aggregate(lower, coll)
            return A.Call(lower, self.call_args())
        raise self.fail(["expression"])

    def call_args(self) -> tuple:
        self.expect("LPAREN")
        args = []
        if not self.at("RPAREN"):
            args.append(self.expr())
            while self.accept("COMMA"):
                args.append(self.expr())
        self.expect("RPAREN")
        return tuple(args)

    def collect_body(self) -> A.Collect:
        self.expect("LPAREN")
        var = self.ident()
        self.expect("IN")
        source = self.expr()
        self.expect("PIPE")
        body = self.expr()
        self.expect("RPAREN")
        return A.Collect(var, source, body)


def parse_query(text) -> A.QueryAst:
    """Parse query text; raises :class:`ParseError` or :class:`LexError` on bad input."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise LexError("query text is not valid UTF-8", exc.start) from None
    tokens = tokenize(text)
    parser = _Parser(tokens, len(text))
    ast = parser.program()
    return A.QueryAst(ast.sub_queries, ast.merges, source=text)


def parse_expr(text: str):
    parser = _Parser(tokenize(text), len(text))
    node = parser.expr()
    if parser.peek() is not None:
        raise parser.fail(["end of input"])
    return node
