"""Run configuration shared by the engine and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import tomli

NORMALIZATIONS = ("incoming", "outgoing", "none")
FORMATS = ("dot", "json", "csv")
VARIANTS = ("memory", "file")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    store_path: str = "provql.store"
    store_variant: str = "memory"
    merge_gap_ns: int = 10_000_000_000
    epsilon: float = 1e-13
    max_iters: int = 1000
    max_edges: int = 5_000_000
    max_nodes: Optional[int] = None
    max_depth: Optional[int] = None
    output_format: str = "json"
    seed: int = 0
    weight_normalization: str = "incoming"
    batch_size: int = 10_000

    def __post_init__(self):
        if self.store_variant not in VARIANTS:
            raise ConfigError(f"store_variant must be one of {VARIANTS}")
        if self.output_format not in FORMATS:
            raise ConfigError(f"output_format must be one of {FORMATS}")
        if self.weight_normalization not in NORMALIZATIONS:
            raise ConfigError(f"weight_normalization must be one of {NORMALIZATIONS}")
        for name in ("epsilon", "max_iters", "max_edges", "batch_size"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("max_nodes", "max_depth"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive")
        # zero is meaningful for these two: merge only touching events, default RNG stream
        if self.merge_gap_ns < 0 or self.seed < 0:
            raise ConfigError("merge_gap_ns and seed must be non-negative")

    def with_overrides(self, **overrides) -> "Config":
        clean = {k: v for k, v in overrides.items() if v is not None}
        _check_keys(clean)
        return replace(self, **clean)

    def as_dict(self) -> dict:
        return asdict(self)


def _check_keys(data: dict) -> None:
    known = {f.name for f in fields(Config)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def load_config(path) -> Config:
    """Read a TOML or JSON config file; unknown keys are an error."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomli.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a table/object")
    data = data.get("provql", data)
    _check_keys(data)
    try:
        return Config(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
