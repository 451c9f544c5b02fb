from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from provql import catalog, cli
from provql.config import Config, ConfigError, load_config

from test_traversal import STEP, _chain_store


@pytest.fixture
def store_dir(tmp):
    log = tmp / "log.jsonl"
    log.write_text("\n".join(json.dumps(r) for r in _chain_store().dump_records()) + "\n")
    out = CliRunner().invoke(cli.main, ["import", str(log), "--store", str(tmp / "st")])
    assert out.exit_code == 0, out.output
    stats = json.loads(out.output)
    assert stats["accepted"] == 8 and stats["events"] == 8
    return tmp / "st"


def _run(*args, **kw):
    return CliRunner().invoke(cli.main, [str(a) for a in args], **kw)


def test_query_writes_graph_and_summary(store_dir, tmp):
    out = _run("query", "-e", STEP, "--store", store_dir, "-o", tmp / "g.json", "--format", "json")
    assert out.exit_code == 0, out.output
    assert "backward edges: 4" in out.output and "final edges: 4" in out.output
    graph = json.loads((tmp / "g.json").read_text())
    assert sorted(i for e in graph["edges"] for i in e["raw_ids"]) == [1, 2, 3, 15035]


def test_store_from_environment(store_dir):
    out = _run("query", "-e", STEP, "--format", "csv", env={"PROVQL_STORE": str(store_dir)})
    assert out.exit_code == 0, out.output
    assert out.stdout.startswith("src,dst,optype")


@pytest.mark.parametrize("args, code", [
    (["query", "-e", "MATCH garbage"], 3),
    (["query", "-e", STEP.replace("RETURN g1", "RETURN g9")], 3),
    (["query", "-e", STEP.replace("passwords", "nothing")], 4),
    (["query", "-e", STEP, "--seed", "-1"], 2),
    (["query"], 2),
])
def test_exit_codes(store_dir, args, code):
    out = _run(*args, "--store", store_dir)
    assert out.exit_code == code, out.output


def test_missing_store_and_log(tmp):
    assert _run("query", "-e", STEP, "--store", tmp / "none").exit_code == 2
    assert _run("import", tmp / "none.jsonl", "--store", tmp / "s").exit_code == 2


def test_bad_config_file(store_dir, tmp):
    cfg = tmp / "c.toml"
    cfg.write_text("output_format = 'pdf'\n")
    assert _run("query", "-e", STEP, "--store", store_dir, "--config", cfg).exit_code == 2
    cfg.write_text("[provql]\nunknown_knob = 1\n")
    assert _run("query", "-e", STEP, "--store", store_dir, "--config", cfg).exit_code == 2


def test_repl_export_matches_one_shot(store_dir, tmp):
    for fmt in ("dot", "json", "csv"):
        assert _run("query", "-e", STEP, "--store", store_dir, "--format", fmt, "-o", tmp / f"q.{fmt}").exit_code == 0
    script = "\n".join([
        STEP + ";",
        ":stats g1",
        f":export g1 {tmp / 'r.dot'} dot",
        f":export _ {tmp / 'r.json'} json",
        f":export g1 {tmp / 'r.csv'} csv",
        "MATCH broken;",
        ":quit",
        STEP + ";",
    ])
    out = _run("repl", "--store", store_dir, input=script)
    assert out.exit_code == 0, out.output
    assert "semantic error" in out.output
    assert json.loads(next(ln for ln in out.output.splitlines() if ln.startswith("{")))["edges"] == 4
    for fmt in ("dot", "json", "csv"):
        assert (tmp / f"r.{fmt}").read_bytes() == (tmp / f"q.{fmt}").read_bytes()


def test_split_statements():
    lines = ["MATCH a\n", "RETURN g;\n", ":stats g\n", "MATCH b RETURN h;", "tail"]
    assert list(cli.split_statements(lines)) == ["MATCH a\nRETURN g;", ":stats g", "MATCH b RETURN h;", "tail"]


def test_generate_writes_scenario(tmp):
    out = _run("generate", "password_crack", "--scale", 500, "--seed", 1, "--out", tmp)
    assert out.exit_code == 0, out.output
    manifest = json.loads((tmp / "password_crack.manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["critical_events"]
    assert (tmp / "password_crack.pvql").read_text() == catalog.PASSWORD_CRACK


def test_config_loading(tmp):
    p = tmp / "c.toml"
    p.write_text("[provql]\nepsilon = 1e-10\nweight_normalization = 'outgoing'\n")
    cfg = load_config(p)
    assert cfg.epsilon == 1e-10 and cfg.weight_normalization == "outgoing"
    j = tmp / "c.json"
    j.write_text(json.dumps({"merge_gap_ns": 0}))
    assert load_config(j).merge_gap_ns == 0
    assert Config().with_overrides(seed=None, epsilon=0.5).epsilon == 0.5
    with pytest.raises(ConfigError):
        Config(max_iters=0)
    with pytest.raises(ConfigError):
        load_config(tmp / "missing.toml")
