"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION <n> PASS|FAIL`` line (visible in
``pytest -v`` output) before asserting, so a run's summary can be read off
the log even when some criteria fail.
"""

from __future__ import annotations

import math
import random
import time

import numpy as np
import pytest

from provql import catalog, scenarios
from provql.analytics import assign_weights, cluster_two, compute_features, lda_project, normalize, propagate
from provql.config import Config
from provql.engine import Limits, backward_search, execute, forward_search, plan_traversal, traverse
from provql.evaluator import Binding
from provql.lang import format_query, parse_query, validate_ast
from provql.model import EntityKey, RawEvent
from provql.store import FileStore, MemoryStore, save_store

from conftest import (
    BACKWARD_SPEC, FORWARD_SPEC, WEIGHTED_SUM, backward_oracle, forward_oracle, poi_for, random_store,
)
from test_algebra import random_graph
from test_analytics import PROJECTION, _blobs, _exact_scores, _random_dag, _reference_features

SCALE = 10_000
SEEDS = range(5)


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


@pytest.fixture
def info(capsys):
    def emit(line: str) -> None:
        with capsys.disabled():
            print(f"\n  {line}", end="")
    return emit


def _raw(g):
    return {i for e in g.edges for i in e.raw_ids}


# 1 ---------------------------------------------------------------------------------


def test_criterion_1_reference_queries(report):
    t0 = time.perf_counter()
    problems = []
    for name, text in catalog.ALL.items():
        q = parse_query(text)
        errors = validate_ast(q)
        if errors:
            problems.append(f"{name}: {errors}")
        if parse_query(format_query(q)) != q:
            problems.append(f"{name}: print/parse changed the tree")
    seconds = time.perf_counter() - t0
    ok = not problems and seconds < 1.0
    report(1, ok, f"{len(catalog.ALL)} queries, {seconds:.3f}s, problems={problems}")
    assert ok


# 2 ---------------------------------------------------------------------------------


def test_criterion_2_traversal_oracles(report):
    t0 = time.perf_counter()
    mismatches = []
    for seed in range(100):
        rng = random.Random(seed)
        store = random_store(seed, n_entities=rng.randrange(5, 101), n_events=rng.randrange(10, 1001))
        events = list(store.all_events())
        poi = poi_for(store, rng.randrange(1, len(events) + 1))
        entries = sorted(rng.sample(sorted(store.entities), min(3, len(store.entities))))
        if _raw(backward_search(store, poi, BACKWARD_SPEC)) != backward_oracle(events, poi.event):
            mismatches.append(("backward", seed))
        if _raw(forward_search(store, entries, FORWARD_SPEC)) != forward_oracle(events, set(entries)):
            mismatches.append(("forward", seed))
    seconds = time.perf_counter() - t0
    ok = not mismatches and seconds < 60
    report(2, ok, f"100 stores, mismatches={mismatches}, {seconds:.1f}s")
    assert ok


# 3 ---------------------------------------------------------------------------------

T0 = 1_000_000_000


def _planted_store(total=100_000, closure=300, seed=0):
    """A backward tree of ``closure`` events (POI included) hidden in unrelated traffic.

    Background events also touch the tree's nodes, but only after the POI, so
    the dependency rule never admits them.
    """
    rng = random.Random(seed)
    tree_keys = [EntityKey.file("1", "/poi/sink"), EntityKey.process("1", 1, "writer")]
    events = [RawEvent(1, tree_keys[1], tree_keys[0], "write", T0 + 900, T0 + 901, 10)]
    # latest admissible start time per tree node
    bound = {0: T0 + 901, 1: T0 + 901}
    for i in range(closure - 1):
        y = rng.randrange(len(tree_keys))
        tree_keys.append(EntityKey.process("1", 10 + i, f"t{i}") if i % 2 else EntityKey.file("1", f"/tree/{i}"))
        x = len(tree_keys) - 1
        start = bound[y] - rng.randrange(1, 50)
        events.append(RawEvent(len(events) + 1, tree_keys[x], tree_keys[y], "read", start, start + 1, 5))
        bound[x] = start + 1
    noise_keys = [EntityKey.process("1", 100_000 + i, f"n{i}") for i in range(5000)]
    late = T0 + 10_000
    while len(events) < total:
        eid = len(events) + 1
        a = rng.choice(noise_keys)
        if rng.random() < 0.3:
            t = late + rng.randrange(10**6)
            b = rng.choice(tree_keys)
            src, dst = (a, b) if rng.random() < 0.5 else (b, a)
        else:
            t = rng.randrange(T0, late + 10**6)
            src, dst = a, rng.choice(noise_keys)
            if src == dst:
                continue
        events.append(RawEvent(eid, src, dst, "write", t, t + rng.randrange(100), 7))
    store = MemoryStore()
    stats = store.insert_batch([(k, {}) for k in tree_keys + noise_keys], events)
    assert stats.rejected == 0
    return store, set(range(1, closure + 1))


def test_criterion_3_incremental_fetching(report, tmp):
    store, planted = _planted_store()
    poi = poi_for(store, 1)
    plan = plan_traversal(BACKWARD_SPEC)
    runs = {}
    save_store(store, tmp / "s")
    with FileStore(tmp / "s") as fs:
        for label, s in (("memory", store), ("file", fs)):
            s.reset_fetch_count()
            g, _ = traverse(s, plan, [poi.event.dst], poi.bindings(), Limits(), poi.event)
            fetched = s.fetch_count()
            degree = sum(len(list(store.incoming(n))) + len(list(store.outgoing(n))) for n in g.entities)
            runs[label] = (_raw(g), fetched, degree)
    closure, fetched, degree = runs["memory"]
    agree = runs["memory"][0] == runs["file"][0] and runs["memory"][1] == runs["file"][1]
    ok = closure == planted and fetched <= degree and fetched < 0.05 * len(store) and agree
    report(3, ok, f"closure={len(closure)} planted={len(planted)} fetched={fetched} "
                  f"degree_bound={degree} total={len(store)} variants_agree={agree}")
    assert ok


# 4 ---------------------------------------------------------------------------------


def test_criterion_4_weighting_numerics(report):
    worst_feature = 0.0
    worst_sum = 0.0
    for seed in range(10):
        store = random_store(seed, 50, 800)
        poi = poi_for(store, 1 + seed * 37)
        g = backward_search(store, poi, BACKWARD_SPEC)
        if len(g.edges) < 3:
            continue
        fm = compute_features(g, PROJECTION.features, Binding({"st": poi.event}), ("e", "r"), "v")
        want = np.array([_reference_features(g, e, poi.event) for e in g.edges])
        rel = np.abs(fm.values - want) / np.maximum(np.abs(want), 1e-300)
        worst_feature = max(worst_feature, float(rel.max()))
        for mode, side in (("outgoing", "src"), ("incoming", "dst")):
            w = assign_weights(g, fm, mode, seed).graph
            totals: dict = {}
            for e in w.edges:
                totals.setdefault(getattr(e, side), []).append(e.weight)
            worst_sum = max(worst_sum, max(abs(math.fsum(v) - 1.0) for v in totals.values()))
    margins = []
    for seed in range(20):
        x, truth = _blobs(seed)
        scores, _ = lda_project(x, cluster_two(x, seed))
        margins.append(float(scores[truth == 1].min() - scores[truth == 0].max()))
    ok = worst_feature <= 1e-9 and worst_sum <= 1e-9 and min(margins) > 0
    report(4, ok, f"max feature rel err={worst_feature:.2e}, max |sum-1|={worst_sum:.2e}, "
                  f"min LDA margin over 20 seeds={min(margins):.3f}")
    assert ok


# 5 ---------------------------------------------------------------------------------


def test_criterion_5_propagation(report):
    worst = 0.0
    most_iters = 0
    unconverged = 0
    for seed in range(100):
        g, poi = _random_dag(seed)
        g = normalize(g, "incoming" if seed % 2 else "outgoing")
        res = propagate(g, WEIGHTED_SUM, poi, epsilon=1e-13, max_iters=1000)
        exact = _exact_scores(g, poi)
        worst = max(worst, max(abs(res.scores[n] - v) for n, v in exact.items()))
        most_iters = max(most_iters, res.iterations)
        unconverged += not res.converged
    ok = worst <= 1e-10 and unconverged == 0 and most_iters <= 1000
    report(5, ok, f"100 DAGs, max abs err={worst:.2e}, max iterations={most_iters}, unconverged={unconverged}")
    assert ok


# 6 ---------------------------------------------------------------------------------


def test_criterion_6_algebra_laws(report):
    from provql import algebra

    failures = []
    for i in range(100):
        a, b = random_graph(2 * i), random_graph(2 * i + 1, id_offset=1000)
        if algebra.union(a, a).signatures() != a.signatures():
            failures.append(("idempotence", i))
        if algebra.union(a, b).signatures() != algebra.union(b, a).signatures():
            failures.append(("commutativity", i))
        inter = algebra.intersect(a, b).signatures()
        if not (inter <= a.signatures() and inter <= b.signatures()):
            failures.append(("containment", i))
    ok = not failures
    report(6, ok, f"100 pairs, failures={failures}")
    assert ok


# 7 ---------------------------------------------------------------------------------


def test_criterion_7_scenarios(report, info):
    failures = []
    for name in scenarios.SCENARIOS:
        t0 = time.perf_counter()
        for seed in SEEDS:
            sc = scenarios.generate(name, SCALE, seed)
            score = scenarios.score_run(sc)
            j = score.as_json()
            info(f"{name} seed={seed} FN={j['fn']} final={j['final_edges']} backward={j['backward_raw']} "
                 f"ratio={j['ratio']:.4f} raw_ratio={j['raw_ratio']:.4f} missed={j['missed']}")
            if score.missed:
                failures.append(f"{name}/{seed}: FN={len(score.missed)}")
            if score.ratio > 0.05:
                failures.append(f"{name}/{seed}: ratio={score.ratio:.4f}")
        seconds = time.perf_counter() - t0
        info(f"{name}: {seconds:.1f}s for {len(SEEDS)} seeds")
        if seconds > 120:
            failures.append(f"{name}: {seconds:.0f}s")
    ok = not failures
    report(7, ok, f"failures={failures}")
    assert ok


# 8 ---------------------------------------------------------------------------------


def _unfiltered_edges(result) -> int:
    return next(s.edges for s in result.report.stages if s.kind == "weights")


def test_criterion_8_weight_filter(report, info):
    failures = []
    for name in scenarios.SCENARIOS:
        sc = scenarios.generate(name, SCALE, 0)
        store = scenarios.load(sc)
        match_a = sc.query.split("\n", 1)[0]
        for label, text in (("reference", catalog.WEIGHT_FILTER), ("anchor", sc.weight_query)):
            res = execute(parse_query(text), store, Config())
            kept, unfiltered = len(res.graph.edges), _unfiltered_edges(res)
            line = f"{name} {label}: backward={res.report.backward_edges} unfiltered={unfiltered} kept={kept}"
            if label == "anchor":
                back = execute(parse_query(catalog.backward_only(match_a)), store, Config()).graph
                crit = set(sc.manifest["critical_by_host"]["1"]) & back.raw_event_ids()
                crit_kept = len(crit & res.graph.raw_event_ids())
                lost = 100.0 * (1 - crit_kept / len(crit)) if crit else 0.0
                line += f" CritKept={crit_kept}/{len(crit)} CritLost={lost:.1f}%"
            info(line)
            if not 0 < kept < unfiltered:
                failures.append(f"{name}/{label}: kept={kept} unfiltered={unfiltered}")
    ok = not failures
    report(8, ok, f"failures={failures}")
    assert ok
