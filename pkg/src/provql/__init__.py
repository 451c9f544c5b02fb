"""Provenance graph queries over audit logs."""

from __future__ import annotations

from .config import Config, load_config
from .engine import Engine, ExecutionError, Result
from .importer import import_file, import_lines
from .lang import parse_query
from .store import MemoryStore, open_store, save_store

__all__ = [
    "Config", "load_config", "Engine", "ExecutionError", "Result",
    "import_file", "import_lines", "parse_query", "MemoryStore", "open_store", "save_store",
]
