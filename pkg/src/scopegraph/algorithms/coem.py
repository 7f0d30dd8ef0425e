"""Co-EM on a bipartite noun-phrase / context graph."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..consistency import ConsistencyModel
from ..engine import Engine, EngineConfig, RunStats
from ..graph import DataGraph
from ..scheduling import SchedulerKind, Task

THRESHOLD = 1e-5
NP, CT = "NP", "CT"


@dataclass
class CoemVertex:
    belief: np.ndarray
    is_seed: bool = False
    kind: str = NP


def make_coem_update(threshold: float = THRESHOLD):
    def coem_update(scope, table, sink):
        vd = scope.data
        if vd.is_seed:
            return
        graph = scope.graph
        edata, vdata = graph.edge_data, graph.vertex_data
        num = np.zeros_like(vd.belief)
        den = 0.0
        for e in scope.out_edges:
            w = edata[e]
            num += w * vdata[graph.edge_target[e]].belief
            den += w
        for e in scope.in_edges:
            w = edata[e]
            num += w * vdata[graph.edge_source[e]].belief
            den += w
        if den <= 0:
            warnings.warn(f"vertex {scope.vertex} has no weighted neighbours; belief left unchanged")
            return
        new = num / den
        change = float(np.abs(new - vd.belief).sum())
        vd.belief = new
        if change > threshold:
            for u in scope.neighbors:
                sink.add(u)

    return coem_update


def build_coem_graph(n_np: int, n_ct: int, edges, n_classes: int, seeds: dict) -> DataGraph:
    """Vertices 0..n_np-1 are noun phrases, the rest contexts.

    ``edges`` holds (np, ct, count) with ``ct`` indexed from 0; ``seeds`` maps
    vertex id to class index. Non-seed beliefs start uniform.
    """
    g = DataGraph()
    for v in range(n_np + n_ct):
        if v in seeds:
            b = np.zeros(n_classes)
            b[seeds[v]] = 1.0
        else:
            b = np.full(n_classes, 1.0 / n_classes)
        g.add_vertex(CoemVertex(b, v in seeds, NP if v < n_np else CT))
    for a, c, w in edges:
        g.add_edge(a, n_np + c, float(w))
    return g


def synthetic_coem(n_np: int, n_ct: int, n_classes: int, degree: int, seed_fraction: float,
                   rng: np.random.Generator):
    """Random bipartite instance where every vertex reaches a seed.

    Returns (edges, seeds) for :func:`build_coem_graph`.
    """
    pairs = set()
    # a spanning path alternating NP / CT keeps the graph connected
    order_np = rng.permutation(n_np)
    order_ct = rng.permutation(n_ct)
    for i in range(max(n_np, n_ct)):
        a = int(order_np[i % n_np])
        pairs.add((a, int(order_ct[i % n_ct])))
        pairs.add((a, int(order_ct[(i + 1) % n_ct])))
    for a in range(n_np):
        for c in rng.choice(n_ct, size=min(degree, n_ct), replace=False):
            pairs.add((a, int(c)))
    edges = [(a, c, float(rng.integers(1, 10))) for a, c in sorted(pairs)]
    n = n_np + n_ct
    n_seeds = max(n_classes, int(round(seed_fraction * n)))
    chosen = rng.choice(n, size=n_seeds, replace=False)
    seeds = {int(v): i % n_classes for i, v in enumerate(chosen)}
    return edges, seeds


def run_coem(graph: DataGraph, workers: int = 1, scheduler: SchedulerKind | str = SchedulerKind.MULTIQUEUE,
             model: ConsistencyModel = ConsistencyModel.EDGE, threshold: float = THRESHOLD,
             sweeps: int = 10) -> RunStats:
    scheduler = SchedulerKind(scheduler) if isinstance(scheduler, str) else scheduler
    cfg = EngineConfig(workers=workers, model=model, scheduler=scheduler, sweeps=sweeps)
    eng = Engine(graph, [make_coem_update(threshold)], config=cfg)
    tasks = [Task(v, 0, 1.0) for v in range(graph.num_vertices)] if scheduler.dynamic else ()
    return eng.run(tasks)


def beliefs(graph: DataGraph) -> np.ndarray:
    return np.stack([vd.belief for vd in graph.vertex_data])


def fixed_point_residual(graph: DataGraph) -> float:
    """Largest L1 change one more update of any non-seed vertex would make."""
    worst = 0.0
    vdata, edata = graph.vertex_data, graph.edge_data
    for v, vd in enumerate(vdata):
        if vd.is_seed:
            continue
        num = np.zeros_like(vd.belief)
        den = 0.0
        for e in graph.out_edges(v) + graph.in_edges(v):
            num += edata[e] * vdata[graph.other(e, v)].belief
            den += edata[e]
        if den > 0:
            worst = max(worst, float(np.abs(num / den - vd.belief).sum()))
    return worst


def oracle_beliefs(graph: DataGraph) -> np.ndarray:
    """Fixed point of the weighted-average update by a dense linear solve."""
    n = graph.num_vertices
    W = np.zeros((n, n))
    for e in range(graph.num_edges):
        u, v = graph.endpoints(e)
        W[u, v] += graph.edge_data[e]
        W[v, u] += graph.edge_data[e]
    B = beliefs(graph).copy()
    free = [v for v in range(n) if not graph.vertex_data[v].is_seed and W[v].sum() > 0]
    fixed = [v for v in range(n) if v not in set(free)]
    P = W[free] / W[free].sum(axis=1, keepdims=True)
    A = np.eye(len(free)) - P[:, free]
    B[free] = np.linalg.solve(A, P[:, fixed] @ B[fixed])
    return B
