"""Query language front-end: tokenizer, parser, printer and static checks."""

from .ast import QueryAst, SubQuery
from .lexer import LexError, QueryError, Token, tokenize
from .parser import ParseError, parse_expr, parse_query
from .printer import format_expr, format_query
from .semantics import SemanticError, validate_ast

__all__ = [
    "LexError", "ParseError", "QueryAst", "QueryError", "SemanticError", "SubQuery", "Token",
    "format_expr", "format_query", "parse_expr", "parse_query", "tokenize", "validate_ast",
]
