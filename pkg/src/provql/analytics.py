"""Edge merging, feature weighting and impact-score propagation.

The weighting pipeline is: merge bursts of parallel events, evaluate one
feature column per projection expression, standardize, split the edges into
two clusters with k-means, project onto the Fisher discriminant of those
clusters, min-max scale to [0, 1], then normalize per node.  Propagation
iterates the reduce body (Jacobi style) until the total absolute change drops
below ``epsilon``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .evaluator import Binding, EvalError, GraphAdjacency, NodeRef, compile_feature, eval_bool, evaluate
from .lang import ast as A
from .model import GraphEdge, ProvGraph, fuse_edges

log = logging.getLogger(__name__)

STD_FLOOR = 1e-12
LDA_RIDGE = 1e-6
KMEANS_MAX_ITERS = 100


# --- edge merging -------------------------------------------------------------


def merge_parallel_edges(g: ProvGraph, gap_threshold: int) -> ProvGraph:
    """Fuse same-(src, dst, optype) events whose gap is at most ``gap_threshold`` ns."""
    groups: dict = {}
    for e in g.edges:
        groups.setdefault(e.ends, []).append(e)
    merged = []
    for ends in sorted(groups, key=lambda k: (k[0], k[1], k[2].code)):
        run: list = []
        run_end = None
        for e in sorted(groups[ends], key=lambda e: (e.starttime, e.id)):
            if run and e.starttime - run_end <= gap_threshold:
                run.append(e)
                run_end = max(run_end, e.endtime)
                continue
            if run:
                merged.append(fuse_edges(run))
            run, run_end = [e], e.endtime
        merged.append(fuse_edges(run))
    merged.sort(key=lambda e: (e.starttime, e.id))
    return ProvGraph(dict(g.entities), merged, dict(g.scores), g.poi_node, g.truncated)


# --- features -----------------------------------------------------------------


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (edges, features)
    edges: list

    @property
    def shape(self) -> tuple:
        return self.values.shape


class FeatureError(EvalError):
    def __init__(self, edge_id: int, feature: int, reason: str):
        super().__init__(f"feature {feature} on edge {edge_id}: {reason}")
        self.edge_id = edge_id
        self.feature = feature


def compute_features(
    g: ProvGraph,
    features: Sequence,
    base: Binding,
    edge_vars: Sequence[str] = ("r", "e"),
    node_var: Optional[str] = "v",
    node_expr=None,
    backward_graph: Optional[ProvGraph] = None,
) -> FeatureMatrix:
    """Evaluate every feature expression once per edge of ``g``.

    Each edge is bound to every name in ``edge_vars``; ``node_var`` is bound to
    ``node_expr`` evaluated on the edge (``dst(r)`` by default).  Degree
    aggregates see the adjacency of ``backward_graph`` (``g`` when omitted).
    """
    adjacency = GraphAdjacency(backward_graph if backward_graph is not None else g)
    runners = [compile_feature(f) for f in features]
    rows = np.empty((len(g.edges), len(runners)), dtype=float)
    for i, edge in enumerate(g.edges):
        slots = dict(base.slots)
        for name in edge_vars:
            slots[name] = edge
        b = Binding(slots, adjacency, base.weights, base.graphs)
        if node_var is not None:
            try:
                node = evaluate(node_expr, b) if node_expr is not None else NodeRef(edge.dst)
            except EvalError as exc:
                raise FeatureError(edge.id, -1, str(exc)) from None
            b.slots[node_var] = node
        for j, run in enumerate(runners):
            try:
                rows[i, j] = run(b)
            except EvalError as exc:
                raise FeatureError(edge.id, j, str(exc)) from None
    return FeatureMatrix(rows, list(g.edges))


# --- clustering and projection ------------------------------------------------------


def standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return (x - mean) / std, mean, std


def _farthest_pair(z: np.ndarray) -> tuple[int, int]:
    # two sweeps: farthest from row 0, then farthest from that point
    a = int(np.argmax(((z - z[0]) ** 2).sum(axis=1)))
    b = int(np.argmax(((z - z[a]) ** 2).sum(axis=1)))
    if a == b:
        return 0, a
    return min(a, b), max(a, b)


def cluster_two(x: np.ndarray, seed: int = 0) -> Optional[np.ndarray]:
    """k-means with k=2 on standardized rows; ``None`` when all rows coincide.

    Initialization is deterministic (farthest pair), so ``seed`` only breaks
    exact distance ties between the two centroids.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        return None
    z, _, _ = standardize(x)
    if np.allclose(z, z[0], rtol=0.0, atol=1e-12):
        return None
    rng = np.random.default_rng(seed)
    a, b = _farthest_pair(z)
    centers = np.stack([z[a], z[b]])
    labels = np.full(len(z), -1)
    for _ in range(KMEANS_MAX_ITERS):
        d = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d, axis=1)
        ties = np.isclose(d[:, 0], d[:, 1], rtol=0.0, atol=0.0)
        if ties.any():
            new[ties] = rng.integers(0, 2, ties.sum())
        if np.array_equal(new, labels):
            break
        labels = new
        for k in (0, 1):
            members = z[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    if len(set(labels.tolist())) < 2:
        return None
    return labels


@dataclass
class ProjectionModel:
    labels: np.ndarray
    w: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    critical: int
    fallback: bool = False
    lo: float = 0.0
    hi: float = 1.0

    def score(self, x: np.ndarray) -> np.ndarray:
        """Unscaled projection of raw feature rows."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return ((x - self.mean) / self.std) @ self.w

    def project(self, x: np.ndarray) -> np.ndarray:
        """Projection scaled by the fitted range and clipped to [0, 1]."""
        s = self.score(x)
        if self.hi - self.lo <= 0.0:
            return np.ones(len(s))
        return np.clip((s - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def as_json(self) -> dict:
        return {
            "cluster_sizes": [int((self.labels == k).sum()) for k in (0, 1)],
            "critical_cluster": int(self.critical),
            "w": [float(v) for v in self.w],
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "fallback": self.fallback,
        }


def fisher_direction(z: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, bool]:
    """``(S_W + ridge I)^-1 (mu1 - mu0)``; falls back to equal coefficients."""
    d = z.shape[1]
    c0, c1 = z[labels == 0], z[labels == 1]
    mu0, mu1 = c0.mean(axis=0), c1.mean(axis=0)
    diff = mu1 - mu0
    if np.allclose(diff, 0.0, atol=1e-15):
        log.info("cluster means coincide; using equal-coefficient projection")
        return np.full(d, 1.0 / math.sqrt(d)), True
    s_w = (c0 - mu0).T @ (c0 - mu0) + (c1 - mu1).T @ (c1 - mu1)
    try:
        w = np.linalg.solve(s_w + LDA_RIDGE * np.eye(d), diff)
    except np.linalg.LinAlgError:
        w = None
    if w is None or not np.all(np.isfinite(w)) or np.allclose(w, 0.0):
        log.info("scatter matrix singular; using equal-coefficient projection")
        return np.full(d, 1.0 / math.sqrt(d)), True
    return w, False


def minmax(s: np.ndarray) -> np.ndarray:
    lo, hi = float(s.min()), float(s.max())
    if hi - lo <= 0.0:
        return np.ones_like(s)
    return np.clip((s - lo) / (hi - lo), 0.0, 1.0)


def critical_cluster(z: np.ndarray, labels: np.ndarray) -> int:
    """The cluster whose members have the larger mean standardized feature value.

    Every projection feature grows with relevance (closer amount, closer time,
    higher fan-out ratio), so that cluster is the one to weight up.
    """
    totals = z.sum(axis=1)
    m0, m1 = totals[labels == 0].mean(), totals[labels == 1].mean()
    return 1 if m1 >= m0 else 0


def lda_project(x: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, ProjectionModel]:
    """Scores in [0, 1], with the critical cluster projecting above the other."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    if len(set(labels.tolist())) != 2:
        raise ValueError("lda_project needs two non-empty classes")
    z, mean, std = standardize(x)
    w, fallback = fisher_direction(z, labels)
    crit = critical_cluster(z, labels)
    s = z @ w
    if s[labels == crit].mean() < s[labels != crit].mean():
        w, s = -w, -s
    model = ProjectionModel(labels, w, mean, std, crit, fallback, float(s.min()), float(s.max()))
    return minmax(s), model


# --- normalization ------------------------------------------------------------------


def _normalize(g: ProvGraph, raw: Sequence[float], by_src: bool) -> ProvGraph:
    groups: dict = {}
    for i, e in enumerate(g.edges):
        groups.setdefault(e.src if by_src else e.dst, []).append(i)
    weights = [0.0] * len(g.edges)
    for idx in groups.values():
        total = math.fsum(raw[i] for i in idx)
        for i in idx:
            weights[i] = raw[i] / total if total > 0 else 1.0 / len(idx)
    edges = [e.with_weight(min(1.0, max(0.0, w))) for e, w in zip(g.edges, weights)]
    return ProvGraph(dict(g.entities), edges, dict(g.scores), g.poi_node, g.truncated)


def _raw_weights(g: ProvGraph) -> list:
    raw = []
    for e in g.edges:
        if e.weight is None or e.weight < 0:
            raise ValueError(f"edge {e.id} lacks a non-negative raw weight")
        raw.append(e.weight)
    return raw


def normalize_outgoing(g: ProvGraph) -> ProvGraph:
    """Divide each weight by the total over its source's out-edges."""
    return _normalize(g, _raw_weights(g), by_src=True)


def normalize_incoming(g: ProvGraph) -> ProvGraph:
    """Divide each weight by the total over its destination's in-edges."""
    return _normalize(g, _raw_weights(g), by_src=False)


def normalize(g: ProvGraph, mode: str) -> ProvGraph:
    if mode == "outgoing":
        return normalize_outgoing(g)
    if mode == "incoming":
        return normalize_incoming(g)
    if mode == "none":
        return g
    raise ValueError(f"unknown normalization {mode!r}")


@dataclass
class WeightingResult:
    graph: ProvGraph
    features: FeatureMatrix
    model: Optional[ProjectionModel]
    raw: np.ndarray
    degenerate: bool = False

    def summary(self) -> dict:
        out = {"edges": len(self.graph.edges), "degenerate": self.degenerate}
        if self.model is not None:
            out["projection"] = self.model.as_json()
        return out


def assign_weights(
    g: ProvGraph, fm: FeatureMatrix, normalization: str, seed: int = 0,
    fit_mask: Optional[np.ndarray] = None,
) -> WeightingResult:
    """Cluster, project and normalize; ``g`` must be the graph ``fm`` was built from.

    ``fit_mask`` selects the rows the clusters and the projection are fitted
    on; the remaining rows are projected with the fitted model.
    """
    if len(g.edges) == 0:
        return WeightingResult(g, fm, None, np.zeros(0))
    x = fm.values
    fit = x if fit_mask is None else x[np.asarray(fit_mask, dtype=bool)]
    labels = cluster_two(fit, seed)
    if labels is None:
        raw = np.ones(len(g.edges))
        model = None
    else:
        _, model = lda_project(fit, labels)
        raw = model.project(x)
    weighted = ProvGraph(
        dict(g.entities), [e.with_weight(float(w)) for e, w in zip(g.edges, raw)],
        dict(g.scores), g.poi_node, g.truncated,
    )
    return WeightingResult(normalize(weighted, normalization), fm, model, raw, labels is None)


# --- propagation --------------------------------------------------------------------


@dataclass
class PropagationResult:
    scores: dict
    iterations: int
    converged: bool
    residual: float
    history: list = field(default_factory=list)


def _is_weighted_sum(r: A.Reduce, node_var: str) -> bool:
    """Recognize ``reduce(acc = 0, o IN out(u) | acc + o.weight * dst(o).rel)``."""
    if r.init != 0:
        return False
    src = r.source
    if not (isinstance(src, A.Call) and src.name == "out" and src.args == (A.Var(node_var),)):
        return False
    o = A.Var(r.var)
    prod_forms = {
        A.BinOp("*", A.Prop(o, "weight"), A.Prop(A.Call("dst", (o,)), "rel")),
        A.BinOp("*", A.Prop(A.Call("dst", (o,)), "rel"), A.Prop(o, "weight")),
    }
    body = r.body
    if not (isinstance(body, A.BinOp) and body.op == "+"):
        return False
    acc = A.Var(r.acc)
    return (body.left == acc and body.right in prod_forms) or (body.right == acc and body.left in prod_forms)


def propagate(
    g: ProvGraph,
    reduce: A.Reduce,
    poi_node: int,
    node_var: str = "u",
    epsilon: float = 1e-13,
    max_iters: int = 1000,
    base: Optional[Binding] = None,
) -> PropagationResult:
    """Jacobi iteration of ``rel(u) <- reduce(...)`` with ``rel(poi_node) = 1`` fixed."""
    nodes = sorted(g.entities)
    if poi_node not in g.entities:
        raise ValueError("POI node is not part of the graph")
    index = {n: i for i, n in enumerate(nodes)}
    poi = index[poi_node]
    rel = np.zeros(len(nodes))
    rel[poi] = 1.0
    fast = _is_weighted_sum(reduce, node_var)
    if fast:
        src = np.array([index[e.src] for e in g.edges], dtype=np.int64)
        dst = np.array([index[e.dst] for e in g.edges], dtype=np.int64)
        w = np.array([e.weight if e.weight is not None else np.nan for e in g.edges], dtype=float)
        if np.isnan(w).any():
            raise EvalError("propagation needs every edge weighted")
    scores: dict = {}
    adjacency = GraphAdjacency(g, scores)
    base = base or Binding()
    converged = False
    residual = float("inf")
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        if fast:
            new = np.bincount(src, weights=w * rel[dst], minlength=len(nodes))
        else:
            scores.clear()
            scores.update({n: float(rel[i]) for n, i in index.items()})
            new = np.empty(len(nodes))
            for n, i in index.items():
                b = Binding({**base.slots, node_var: NodeRef(n)}, adjacency, None, base.graphs)
                v = evaluate(reduce, b)
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise EvalError(f"reduce produced a non-finite value at node {n}")
                new[i] = v
        new[poi] = 1.0
        residual = float(np.abs(new - rel).sum())
        history.append(residual)
        rel = new
        if residual < epsilon:
            converged = True
            break
    if not converged:
        log.warning("propagation stopped after %d iterations (residual %.3g)", it, residual)
    return PropagationResult({n: float(rel[i]) for n, i in index.items()}, it, converged, residual, history)


# --- filtering ------------------------------------------------------------------------


def filter_by_weight(g: ProvGraph, where, var: str = "e", base: Optional[Binding] = None) -> ProvGraph:
    """Keep edges satisfying ``where``; isolated nodes go, except the POI node."""
    base = base or Binding()
    adjacency = GraphAdjacency(g)
    kept = []
    for e in g.edges:
        b = Binding({**base.slots, var: e}, adjacency, None, base.graphs)
        if eval_bool(where, b):
            kept.append(e)
    used = {e.src for e in kept} | {e.dst for e in kept}
    if g.poi_node is not None:
        used.add(g.poi_node)
    entities = {n: ent for n, ent in g.entities.items() if n in used}
    scores = {n: s for n, s in g.scores.items() if n in used}
    return ProvGraph(entities, kept, scores, g.poi_node, g.truncated)


def weight_threshold(where) -> Optional[float]:
    """The constant in ``e.weight >= c`` style filters, when it has that shape."""
    if isinstance(where, A.Compare) and isinstance(where.right, A.Literal):
        if isinstance(where.left, A.Prop) and where.left.key == "weight":
            v = where.right.value
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                return float(v)
    return None
