"""Tokenizer for the provenance query language.

Keywords are case-insensitive; identifiers keep their case.  ``--`` starts a
comment that runs to the end of the line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

KEYWORDS = frozenset(
    """
    MATCH WHERE BFS DFS IN BACKWARD FORWARD YIELD UNWIND UWIND AS SET WITH
    RETURN UNION INTERSECT ORDER BY ASC DESC LIMIT AND OR NOT PROJECTION REDUCE
    """.split()
)

INT64_MAX = 2**63 - 1

_PUNCT = [
    ("->", "ARROW"),
    ("<>", "NEQ"),
    ("<=", "LE"),
    (">=", "GE"),
    ("<", "LT"),
    (">", "GT"),
    ("=", "EQ"),
    ("(", "LPAREN"),
    (")", "RPAREN"),
    ("[", "LBRACKET"),
    ("]", "RBRACKET"),
    ("{", "LBRACE"),
    ("}", "RBRACE"),
    (",", "COMMA"),
    (".", "DOT"),
    (":", "COLON"),
    ("|", "PIPE"),
    (";", "SEMI"),
    ("+", "PLUS"),
    ("-", "MINUS"),
    ("*", "STAR"),
    ("/", "SLASH"),
]

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "'": "'"}


class QueryError(ValueError):
    """Base class for every error raised while reading query text."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.message = message
        self.position = position


class LexError(QueryError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str
    value: Union[str, int, float, None]
    pos: int

    def __repr__(self) -> str:
        if self.kind in ("IDENT", "INT", "FLOAT", "STRING"):
            return f"{self.kind} {self.value}"
        return self.kind


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if text.startswith("--", i):
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if c.isascii() and (c.isalpha() or c == "_"):
            j = i + 1
            while j < n and text[j].isascii() and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            upper = word.upper()
            if upper in KEYWORDS:
                tokens.append(Token(upper, word, i))
            else:
                tokens.append(Token("IDENT", word, i))
            i = j
            continue
        if c.isascii() and c.isdigit():
            tok, i = _number(text, i)
            tokens.append(tok)
            continue
        if c in "\"'":
            tok, i = _string(text, i)
            tokens.append(tok)
            continue
        if text.startswith("<-[", i):
            tokens.append(Token("LARROW", "<-", i))
            i += 2
            continue
        for sym, kind in _PUNCT:
            if text.startswith(sym, i):
                tokens.append(Token(kind, sym, i))
                i += len(sym)
                break
        else:
            raise LexError(f"unexpected character {c!r}", i)
    return tokens


def _number(text: str, i: int) -> tuple[Token, int]:
    n = len(text)
    j = i
    while j < n and text[j].isascii() and text[j].isdigit():
        j += 1
    is_float = False
    if j + 1 < n and text[j] == "." and text[j + 1].isascii() and text[j + 1].isdigit():
        is_float = True
        j += 1
        while j < n and text[j].isascii() and text[j].isdigit():
            j += 1
    if j < n and text[j] in "eE":
        k = j + 1
        if k < n and text[k] in "+-":
            k += 1
        if k < n and text[k].isascii() and text[k].isdigit():
            is_float = True
            j = k
            while j < n and text[j].isascii() and text[j].isdigit():
                j += 1
    raw = text[i:j]
    if len(raw) > 400:
        raise LexError("numeric literal too long", i)
    if is_float:
        value: Union[int, float] = float(raw)
        if value != value or value in (float("inf"), float("-inf")):
            raise LexError(f"float literal out of range: {raw}", i)
        tok = Token("FLOAT", value, i)
    else:
        value = int(raw) if len(raw) <= 19 else INT64_MAX + 1
        if value > INT64_MAX:
            raise LexError(f"integer literal exceeds 64 bits: {raw}", i)
        tok = Token("INT", value, i)
    return tok, j


def _string(text: str, i: int) -> tuple[Token, int]:
    quote = text[i]
    out = []
    j = i + 1
    n = len(text)
    while j < n:
        c = text[j]
        if c == "\\":
            if j + 1 >= n:
                break
            out.append(_ESCAPES.get(text[j + 1], text[j + 1]))
            j += 2
            continue
        if c == quote:
            return Token("STRING", "".join(out), i), j + 1
        out.append(c)
        j += 1
    raise LexError("unterminated string", i)
