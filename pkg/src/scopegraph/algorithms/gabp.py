"""Gaussian belief propagation as a solver for symmetric systems A x = b.

Vertex i holds A_ii and b_i; each directed edge i->j (present iff A_ij != 0)
holds A_ij and the message from i to j in precision / mean form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..consistency import ConsistencyModel
from ..engine import Engine, EngineConfig, RunStats
from ..errors import DivergenceError
from ..graph import DataGraph
from ..scheduling import SchedulerKind, Task

GABP_FN = 0
POSTERIOR_FN = 1


@dataclass
class GabpVertex:
    a_ii: float
    b: float
    mean: float = 0.0
    precision: float = 0.0
    updates: int = 0


@dataclass
class GabpEdge:
    a_ij: float
    precision: float = 0.0
    mean: float = 0.0


def build_gabp_graph(A, b) -> DataGraph:
    A = sp.coo_matrix(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    b = np.asarray(b, dtype=float).ravel()
    if len(b) != n:
        raise ValueError(f"A is {n}x{n} but b has {len(b)} entries")
    diag = A.diagonal()
    g = DataGraph()
    for i in range(n):
        g.add_vertex(GabpVertex(float(diag[i]), float(b[i])))
    for i, j, a in sorted(zip(A.row.tolist(), A.col.tolist(), A.data.tolist())):
        if i != j and a != 0:
            g.add_edge(i, j, GabpEdge(float(a)))
    return g


def _aggregate(scope):
    graph = scope.graph
    vd = scope.data
    edata, src = graph.edge_data, graph.edge_source
    p = vd.a_ii
    h = vd.b
    incoming = {}
    for e in scope.in_edges:
        m = edata[e]
        p += m.precision
        h += m.precision * m.mean
        incoming[src[e]] = m
    return p, h, incoming


def make_gabp_update(bound: float = 1e-10, max_updates_per_vertex: int = 100000):
    def gabp_update(scope, table, sink):
        vd = scope.data
        v = scope.vertex
        vd.updates += 1
        if vd.updates > max_updates_per_vertex:
            raise DivergenceError(f"vertex {v} exceeded {max_updates_per_vertex} updates without converging")
        p, h, incoming = _aggregate(scope)
        if not p > 0:
            raise DivergenceError(f"posterior precision {p:.3g} at vertex {v} is not positive; "
                                  "the system is likely not walk-summable")
        vd.precision = p
        vd.mean = h / p
        graph = scope.graph
        edata, dst = graph.edge_data, graph.edge_target
        for e in scope.out_edges:
            t = dst[e]
            ed = edata[e]
            back = incoming.get(t)
            if back is None:
                p_ex, h_ex = p, h
            else:
                p_ex = p - back.precision
                h_ex = h - back.precision * back.mean
            if not p_ex > 0:
                raise DivergenceError(f"cavity precision {p_ex:.3g} on {v}->{t} is not positive; "
                                      "the system is likely not walk-summable")
            new_p = -ed.a_ij * ed.a_ij / p_ex
            new_mu = -ed.a_ij * (h_ex / p_ex) / new_p
            residual = abs(new_p - ed.precision) + abs(new_p * new_mu - ed.precision * ed.mean)
            ed.precision = new_p
            ed.mean = new_mu
            if residual > bound:
                sink.add(t, priority=residual)

    return gabp_update


def gabp_posterior(scope, table, sink):
    """Recompute only the posterior mean / precision from the current messages."""
    vd = scope.data
    p, h, _ = _aggregate(scope)
    if not p > 0:
        raise DivergenceError(f"posterior precision {p:.3g} at vertex {scope.vertex} is not positive")
    vd.precision = p
    vd.mean = h / p


def means(graph: DataGraph) -> np.ndarray:
    return np.array([vd.mean for vd in graph.vertex_data])


class GabpSolver:
    """Reusable solver bound to one graph; messages persist between solves."""

    def __init__(self, graph: DataGraph, workers: int = 1,
                 scheduler: SchedulerKind | str = SchedulerKind.PRIORITY,
                 model: ConsistencyModel = ConsistencyModel.EDGE, bound: float = 1e-10,
                 max_updates_per_vertex: int = 100000, sweeps: int = 1000):
        scheduler = SchedulerKind(scheduler) if isinstance(scheduler, str) else scheduler
        self.graph = graph
        self.scheduler = scheduler
        fns = {GABP_FN: make_gabp_update(bound, max_updates_per_vertex), POSTERIOR_FN: gabp_posterior}
        self.engine = Engine(graph, fns, config=EngineConfig(workers=workers, model=model,
                                                             scheduler=scheduler, sweeps=sweeps))
        self._finish = Engine(graph, fns, config=EngineConfig(workers=workers, model=model,
                                                              scheduler=SchedulerKind.ROUND_ROBIN,
                                                              sweeps=1, function_id=POSTERIOR_FN))

    def reset_messages(self):
        for ed in self.graph.edge_data:
            ed.precision = 0.0
            ed.mean = 0.0

    def solve(self) -> RunStats:
        for vd in self.graph.vertex_data:
            vd.updates = 0
        n = self.graph.num_vertices
        tasks = [Task(v, GABP_FN, np.inf) for v in range(n)] if self.scheduler.dynamic else ()
        stats = self.engine.run(tasks)
        self._finish.run()
        return stats


def gabp_solve(A, b, workers: int = 1, scheduler: SchedulerKind | str = SchedulerKind.PRIORITY,
               model: ConsistencyModel = ConsistencyModel.EDGE, bound: float = 1e-10):
    g = build_gabp_graph(A, b)
    stats = GabpSolver(g, workers, scheduler, model, bound).solve()
    return means(g), stats


def random_diagonally_dominant(n: int, rng: np.random.Generator, density: float = 0.3,
                               margin: float = 0.5) -> np.ndarray:
    """Symmetric, strictly diagonally dominant matrix with random signs."""
    mask = np.triu(rng.random((n, n)) < density, 1)
    off = np.where(mask, rng.normal(size=(n, n)), 0.0)
    off = off + off.T
    row = np.abs(off).sum(axis=1)
    diag = row + margin + rng.random(n)
    return off + np.diag(diag)
