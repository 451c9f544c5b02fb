"""Command line: ``provql import|query|repl|generate``.

Exit codes: 0 success, 2 io/config, 3 parse/semantic, 4 execution.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import algebra, scenarios
from .config import FORMATS, Config, ConfigError, load_config
from .engine import Engine, ExecutionError, Result
from .evaluator import EvalError
from .importer import ImportFailed, import_file
from .lang import QueryError, parse_query, validate_ast
from .store import MemoryStore, StoreError, open_store, save_store

EXIT_IO = 2
EXIT_QUERY = 3
EXIT_EXEC = 4


class Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str):
    raise Failure(code, message)


def _config(config_path, **overrides) -> Config:
    try:
        cfg = load_config(config_path) if config_path else Config()
        return cfg.with_overrides(**overrides)
    except ConfigError as exc:
        _fail(EXIT_IO, f"config error: {exc}")


def _common(fn):
    """Options shared by every subcommand."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="TOML or JSON config file."),
        click.option("--store", "store_path", envvar="PROVQL_STORE", default=None,
                     help="Store directory (default from config or $PROVQL_STORE)."),
        click.option("--format", "output_format", type=click.Choice(FORMATS), default=None),
        click.option("--merge-gap-ns", type=int, default=None),
        click.option("--epsilon", type=float, default=None),
        click.option("--seed", type=int, default=None),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _guarded(fn):
    def run(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Failure as exc:
            click.echo(str(exc), err=True)
            sys.exit(exc.code)

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _open(cfg: Config):
    path = Path(cfg.store_path)
    if not path.exists():
        _fail(EXIT_IO, f"store not found: {path}")
    try:
        return open_store(path, cfg.store_variant)
    except (OSError, StoreError, ValueError) as exc:
        _fail(EXIT_IO, f"cannot open store {path}: {exc}")


def compile_query(text) -> object:
    """Parse and statically check ``text``; failures map to exit code 3."""
    try:
        ast = parse_query(text)
    except QueryError as exc:
        _fail(EXIT_QUERY, f"parse error: {exc}")
    errors = validate_ast(ast)
    if errors:
        _fail(EXIT_QUERY, "semantic error: " + "; ".join(str(e) for e in errors))
    return ast


def run_query(ast, store, cfg: Config) -> Result:
    try:
        return Engine(store, cfg).execute(ast)
    except (ExecutionError, EvalError, ValueError) as exc:
        _fail(EXIT_EXEC, f"execution error: {exc}")


def report_summary(result: Result) -> list[str]:
    rep = result.report
    lines = []
    for s in rep.stages:
        where = "merge" if s.sub_query < 0 else f"q{s.sub_query}.{s.stage}"
        lines.append(f"{where:>8} {s.kind:<14} edges={s.edges:<8} nodes={s.nodes}")
    lines.append(f"backward edges: {rep.backward_edges}  final edges: {rep.final_edges}  "
                 f"fetch_count: {rep.fetch_count}  truncated: {rep.truncated}")
    lines.extend(f"warning: {w}" for w in rep.warnings)
    return lines


@click.group()
def main():
    """Provenance queries over imported audit logs."""


@main.command("import")
@click.argument("log_path", type=click.Path())
@_common
@click.option("--batch-size", type=int, default=None)
@_guarded
def cmd_import(log_path, config_path, store_path, output_format, merge_gap_ns, epsilon, seed, batch_size):
    """Import a JSONL audit log into the store (created if missing)."""
    cfg = _config(config_path, store_path=store_path, output_format=output_format,
                  merge_gap_ns=merge_gap_ns, epsilon=epsilon, seed=seed, batch_size=batch_size)
    if not Path(log_path).is_file():
        _fail(EXIT_IO, f"no such log file: {log_path}")
    target = Path(cfg.store_path)
    try:
        store = MemoryStore.load(target) if target.exists() else MemoryStore()
        stats = import_file(log_path, store, cfg.batch_size)
        save_store(store, target)
    except ImportFailed as exc:
        _fail(EXIT_IO, str(exc))
    except (OSError, StoreError) as exc:
        _fail(EXIT_IO, f"store error: {exc}")
    summary = stats.summary()
    summary.update({"store": str(target), "entities": len(store.entities), "events": len(store)})
    click.echo(json.dumps(summary, sort_keys=True))


@main.command("query")
@click.argument("query_file", type=click.Path(), required=False)
@click.option("-e", "--expr", "text", default=None, help="Query text instead of a file.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="Graph output file (default: stdout).")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None,
              help="Write the full execution report as JSON.")
@_common
@_guarded
def cmd_query(query_file, text, output, report_path, config_path, store_path, output_format,
              merge_gap_ns, epsilon, seed):
    """Run a query and write the resulting graph."""
    cfg = _config(config_path, store_path=store_path, output_format=output_format,
                  merge_gap_ns=merge_gap_ns, epsilon=epsilon, seed=seed)
    if (query_file is None) == (text is None):
        _fail(EXIT_IO, "give exactly one of QUERY_FILE or -e TEXT")
    if text is None:
        try:
            text = Path(query_file).read_bytes()
        except OSError as exc:
            _fail(EXIT_IO, f"cannot read query: {exc}")
    ast = compile_query(text)
    store = _open(cfg)
    result = run_query(ast, store, cfg)
    data = algebra.export(result.graph, cfg.output_format)
    summary = "\n".join(report_summary(result))
    try:
        if report_path:
            Path(report_path).write_text(result.report.to_json() + "\n", encoding="utf-8")
        if output:
            Path(output).write_bytes(data)
            click.echo(summary)
        else:
            sys.stdout.buffer.write(data)
            sys.stdout.flush()
            click.echo(summary, err=True)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write output: {exc}")


class Session:
    """State of one interactive session: named graphs and the open store."""

    def __init__(self, store, cfg: Config, out=None):
        self.store = store
        self.cfg = cfg
        self.graphs: dict = {}
        self.out = out or (lambda s: click.echo(s))

    def statement(self, text: str) -> bool:
        """Handle one statement; returns False when the session should end."""
        text = text.strip()
        if not text:
            return True
        if text.startswith(":"):
            return self.command(text)
        try:
            ast = compile_query(text.rstrip(";") + "\n")
            result = run_query(ast, self.store, self.cfg)
        except Failure as exc:
            self.out(str(exc))
            return True
        # intermediate named graphs stay reachable; the merged result takes the returned name
        self.graphs.update(result.graphs)
        stages = ast.sub_queries[-1].stages
        name = getattr(stages[-1], "graph", "_") if stages else "_"
        self.graphs[name] = result.graph
        self.graphs["_"] = result.graph
        self.out(f"{name}: {len(result.graph.edges)} edges, {len(result.graph.entities)} nodes")
        for line in report_summary(result):
            self.out(line)
        return True

    def command(self, text: str) -> bool:
        parts = text.split()
        cmd, args = parts[0], parts[1:]
        if cmd in (":quit", ":q", ":exit"):
            return False
        if cmd == ":list":
            for name in sorted(self.graphs):
                g = self.graphs[name]
                self.out(f"{name}: {len(g.edges)} edges, {len(g.entities)} nodes")
            return True
        if cmd in (":export", ":stats") and args and args[0] not in self.graphs:
            self.out(f"unknown result {args[0]!r}")
            return True
        if cmd == ":export" and len(args) in (2, 3):
            fmt = args[2] if len(args) == 3 else self.cfg.output_format
            if fmt not in FORMATS:
                self.out(f"unknown format {fmt!r}")
                return True
            try:
                Path(args[1]).write_bytes(algebra.export(self.graphs[args[0]], fmt))
            except OSError as exc:
                self.out(f"cannot write {args[1]}: {exc}")
                return True
            self.out(f"wrote {args[1]}")
            return True
        if cmd == ":stats" and len(args) == 1:
            g = self.graphs[args[0]]
            ops: dict = {}
            for e in g.edges:
                ops[e.optype.value] = ops.get(e.optype.value, 0) + 1
            self.out(json.dumps({
                "edges": len(g.edges), "nodes": len(g.entities),
                "raw_events": sum(e.raw_count for e in g.edges),
                "scored_nodes": len(g.scores), "optypes": dict(sorted(ops.items())),
                "truncated": g.truncated,
            }, sort_keys=True))
            return True
        self.out("commands: :export <name> <file> [dot|json|csv], :stats <name>, :list, :quit")
        return True


def split_statements(lines):
    """Yield statements: queries end with ';', ':' commands end at the line break."""
    buf: list = []
    for line in lines:
        stripped = line.strip()
        if not buf and stripped.startswith(":"):
            yield stripped
            continue
        buf.append(line.rstrip("\n"))
        if stripped.endswith(";"):
            yield "\n".join(buf)
            buf = []
    if any(s.strip() for s in buf):
        yield "\n".join(buf)


@main.command("repl")
@_common
@_guarded
def cmd_repl(config_path, store_path, output_format, merge_gap_ns, epsilon, seed):
    """Interactive session; statements end with ';'."""
    cfg = _config(config_path, store_path=store_path, output_format=output_format,
                  merge_gap_ns=merge_gap_ns, epsilon=epsilon, seed=seed)
    session = Session(_open(cfg), cfg)
    interactive = sys.stdin.isatty()

    def lines():
        while True:
            if interactive:
                click.echo("provql> ", nl=False)
            line = sys.stdin.readline()
            if not line:
                return
            yield line

    for stmt in split_statements(lines()):
        if not session.statement(stmt):
            break


@main.command("generate")
@click.argument("scenario", type=click.Choice(scenarios.SCENARIOS))
@click.option("--scale", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True)
@_guarded
def cmd_generate(scenario, scale, seed, out_dir):
    """Write a synthetic two-host log, its manifest and its investigation query."""
    if scale < 0:
        _fail(EXIT_IO, "scale must be non-negative")
    sc = scenarios.generate(scenario, scale, seed)
    try:
        paths = scenarios.write_scenario(sc, out_dir)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write scenario: {exc}")
    click.echo(json.dumps({k: str(v) for k, v in paths.items()} | {
        "entities": sc.manifest["entities"], "events": sc.manifest["events"],
        "critical_events": len(sc.manifest["critical_events"]),
    }, sort_keys=True))


if __name__ == "__main__":  # pragma: no cover
    main()
