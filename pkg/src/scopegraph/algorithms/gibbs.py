"""Greedy graph colouring and the chromatic (exact parallel) Gibbs sampler.

Colouring runs as an update function under edge consistency. Sampling
executes colour classes in order through the set scheduler; each vertex
draws from its own counter-based RNG stream, so the samples do not depend
on which worker ran the update or in what order within a colour.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..consistency import ConsistencyModel
from ..engine import Engine, EngineConfig, RunStats
from ..errors import DegeneratePotentialError, GraphError
from ..graph import DataGraph
from ..scheduling import SchedulerKind, compile_set_schedule

COLOR_FN = 0
GIBBS_FN = 1


def vertex_rng(seed: int, vertex: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed ^ vertex))


@dataclass
class GibbsVertex:
    node_potential: np.ndarray
    rng: np.random.Generator
    color: int = -1
    sample: int = 0
    counts: Optional[np.ndarray] = None
    trace: Optional[list] = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(len(self.node_potential), dtype=np.int64)


@dataclass
class GibbsEdge:
    # potential[x_source, x_target]
    potential: np.ndarray


def build_gibbs_graph(potentials: Sequence[np.ndarray], edges, pairwise, seed: int = 0,
                      keep_trace: bool = False) -> DataGraph:
    """``edges`` are undirected pairs stored once; ``pairwise`` is one K x K
    matrix for all edges or a sequence with one matrix per edge."""
    g = DataGraph()
    for v, pot in enumerate(potentials):
        g.add_vertex(GibbsVertex(np.asarray(pot, dtype=float), vertex_rng(seed, v),
                                 trace=[] if keep_trace else None))
    for i, (u, v) in enumerate(edges):
        p = pairwise if isinstance(pairwise, np.ndarray) else pairwise[i]
        g.add_edge(u, v, GibbsEdge(np.asarray(p, dtype=float)))
    return g


def greedy_color_update(scope, table, sink):
    used = {scope.vertex_data(u).color for u in scope.neighbors}
    c = 0
    while c in used:
        c += 1
    scope.data.color = c


def color_graph(graph: DataGraph, workers: int = 1) -> RunStats:
    cfg = EngineConfig(workers=workers, model=ConsistencyModel.EDGE, scheduler=SchedulerKind.ROUND_ROBIN,
                       sweeps=1, function_id=COLOR_FN)
    for vd in graph.vertex_data:
        vd.color = -1
    return Engine(graph, {COLOR_FN: greedy_color_update}, config=cfg).run()


def check_coloring(graph: DataGraph):
    for e in range(graph.num_edges):
        u, v = graph.endpoints(e)
        cu, cv = graph.vertex_data[u].color, graph.vertex_data[v].color
        if cu < 0 or cv < 0 or cu == cv:
            raise GraphError(f"improper colouring on edge {u}-{v}: colours {cu}, {cv}")


def color_histogram(graph: DataGraph) -> dict[int, int]:
    return dict(sorted(Counter(vd.color for vd in graph.vertex_data).items()))


def build_color_schedule(graph: DataGraph, sweeps: int = 1, function_id: int = GIBBS_FN):
    """((S_1, f), ..., (S_C, f)) repeated ``sweeps`` times; S_i holds colour i."""
    check_coloring(graph)
    n_colors = 1 + max((vd.color for vd in graph.vertex_data), default=-1)
    sets = [[] for _ in range(n_colors)]
    for v, vd in enumerate(graph.vertex_data):
        sets[vd.color].append(v)
    one = [(s, function_id) for s in sets if s]
    return one * sweeps


def gibbs_update(scope, table, sink):
    vd = scope.data
    graph = scope.graph
    v = scope.vertex
    cond = vd.node_potential.copy()
    edata, vdata, src, dst = graph.edge_data, graph.vertex_data, graph.edge_source, graph.edge_target
    for e in scope.out_edges:
        cond *= edata[e].potential[:, vdata[dst[e]].sample]
    for e in scope.in_edges:
        cond *= edata[e].potential[vdata[src[e]].sample, :]
    cdf = np.cumsum(cond)
    total = cdf[-1]
    if not total > 0:
        raise DegeneratePotentialError(f"conditional at vertex {v} has zero mass")
    u = vd.rng.random() * total
    x = int(np.searchsorted(cdf, u, side="right"))
    if x >= len(cdf):
        x = len(cdf) - 1
    vd.sample = x
    vd.counts[x] += 1
    if vd.trace is not None:
        vd.trace.append(x)


def chromatic_gibbs(graph: DataGraph, sweeps: int, workers: int = 1, color_workers: Optional[int] = None,
                    chunk: int = 5000) -> list[RunStats]:
    """Colour (if needed) then run ``sweeps`` chromatic sweeps.

    The plan is compiled with edge-model exclusion sets, which order any two
    adjacent updates (sampling reads neighbour samples); execution itself
    uses vertex consistency. Long runs are split into ``chunk``-sweep plans.
    """
    if any(vd.color < 0 for vd in graph.vertex_data):
        color_graph(graph, color_workers or workers)
    check_coloring(graph)
    cfg = EngineConfig(workers=workers, model=ConsistencyModel.VERTEX)
    eng = Engine(graph, {GIBBS_FN: gibbs_update}, config=cfg)
    stats = []
    done = 0
    while done < sweeps:
        n = min(chunk, sweeps - done)
        plan = compile_set_schedule(graph, build_color_schedule(graph, n), ConsistencyModel.EDGE)
        stats.append(eng.run(plan=plan))
        done += n
    return stats


def empirical_marginals(graph: DataGraph) -> np.ndarray:
    counts = np.stack([vd.counts for vd in graph.vertex_data]).astype(float)
    return counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
