"""Shooting (coordinate descent) Lasso on a weight / observation bipartite graph.

Objective: ``L(w) = sum_j (w . x_j - y_j)^2 + lam * |w|_1``.

Weight vertex i keeps w_i and a_i = 2 sum_j X_ji^2; observation vertex j keeps
y_j and the residual r_j = y_j - w . x_j. An edge w_i -> y_j carrying X_ji
exists exactly when X_ji is non-zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..consistency import ConsistencyModel
from ..engine import Engine, EngineConfig
from ..graph import DataGraph
from ..scheduling import SchedulerKind, Task


@dataclass
class WeightVertex:
    value: float = 0.0
    a: float = 0.0


@dataclass
class ObservationVertex:
    y: float
    residual: float


def soft_threshold(c: float, lam: float) -> float:
    if c > lam:
        return c - lam
    if c < -lam:
        return c + lam
    return 0.0


def build_lasso_graph(X, y, w0: Optional[np.ndarray] = None) -> DataGraph:
    X = sp.csc_matrix(X)
    n, d = X.shape
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != n:
        raise ValueError(f"X has {n} rows but y has {len(y)} entries")
    w = np.zeros(d) if w0 is None else np.asarray(w0, dtype=float)
    r = y - X @ w
    g = DataGraph()
    for i in range(d):
        col = X.data[X.indptr[i]:X.indptr[i + 1]]
        g.add_vertex(WeightVertex(float(w[i]), 2.0 * float(col @ col)))
    for j in range(n):
        g.add_vertex(ObservationVertex(float(y[j]), float(r[j])))
    for i in range(d):
        for p in range(X.indptr[i], X.indptr[i + 1]):
            if X.data[p] != 0:
                g.add_edge(i, d + int(X.indices[p]), float(X.data[p]))
    return g


def make_shooting_update(lam: float, eps: float = 1e-10, reschedule: bool = True):
    """Exact coordinate minimisation in one weight.

    Residuals and neighbouring weights are touched only when the weight
    moved by more than ``eps``.
    """

    def shooting_update(scope, table, sink):
        wd = scope.data
        if not isinstance(wd, WeightVertex):
            return
        graph = scope.graph
        edata, vdata, dst = graph.edge_data, graph.vertex_data, graph.edge_target
        edges = scope.out_edges
        if wd.a == 0.0:
            wd.value = 0.0
            return
        w = wd.value
        c = 0.0
        for e in edges:
            x = edata[e]
            c += x * (vdata[dst[e]].residual + w * x)
        new = soft_threshold(2.0 * c, lam) / wd.a
        delta = new - w
        if abs(delta) <= eps:
            return
        wd.value = new
        me = scope.vertex
        seen = set()
        for e in edges:
            obs = dst[e]
            vdata[obs].residual -= delta * edata[e]
            if reschedule:
                for u in graph.in_neighbors(obs):
                    if u != me and u not in seen:
                        seen.add(u)
                        sink.add(u)

    return shooting_update


def weights(graph: DataGraph, d: int) -> np.ndarray:
    return np.array([graph.vertex_data[i].value for i in range(d)])


def objective(X, y, w, lam) -> float:
    r = np.asarray(X @ w).ravel() - y
    return float(r @ r + lam * np.abs(w).sum())


def kkt_residual(X, y, w, lam) -> float:
    """max_i of the subgradient optimality violation."""
    grad = 2.0 * np.asarray(X.T @ (np.asarray(X @ w).ravel() - y)).ravel()
    nz = w != 0
    k = np.where(nz, np.abs(grad + lam * np.sign(w)), np.maximum(0.0, np.abs(grad) - lam))
    return float(k.max()) if len(k) else 0.0


def lambda_max(X, y) -> float:
    """Smallest lam for which w = 0 is optimal."""
    return float(2.0 * np.abs(np.asarray(X.T @ y).ravel()).max())


@dataclass
class LassoResult:
    w: np.ndarray
    objective: float
    kkt: float
    updates: int
    history: list = field(default_factory=list)
    stats: list = field(default_factory=list)


def shooting(X, y, lam: float, workers: int = 1, model: ConsistencyModel = ConsistencyModel.FULL,
             scheduler: SchedulerKind | str = SchedulerKind.FIFO, eps: float = 1e-10,
             max_sweeps: int = 10000, tol: float = 1e-9) -> LassoResult:
    """Fit the Lasso with the shooting update.

    With a task scheduler the run is driven by Alg.-4-style rescheduling and
    stops when no task is left. With ``round-robin`` each sweep is its own
    engine run and the objective is recomputed from scratch between sweeps;
    sweeps stop once no weight moves by more than ``tol``.
    """
    X = sp.csc_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    scheduler = SchedulerKind(scheduler) if isinstance(scheduler, str) else scheduler
    graph = build_lasso_graph(X, y)
    if scheduler is SchedulerKind.ROUND_ROBIN:
        cfg = EngineConfig(workers=workers, model=model, scheduler=scheduler, sweeps=1)
        eng = Engine(graph, [make_shooting_update(lam, eps, reschedule=False)], config=cfg)
        history = [objective(X, y, np.zeros(d), lam)]
        stats = []
        prev = weights(graph, d)
        for _ in range(max_sweeps):
            stats.append(eng.run())
            w = weights(graph, d)
            history.append(objective(X, y, w, lam))
            if np.max(np.abs(w - prev), initial=0.0) <= tol:
                break
            prev = w
    else:
        cfg = EngineConfig(workers=workers, model=model, scheduler=scheduler)
        eng = Engine(graph, [make_shooting_update(lam, eps)], config=cfg)
        stats = [eng.run([Task(i, 0, 1.0) for i in range(d)])]
        w = weights(graph, d)
        history = [objective(X, y, w, lam)]
    return LassoResult(w, objective(X, y, w, lam), kkt_residual(X, y, w, lam),
                       sum(s.updates_applied for s in stats), history, stats)


def synthetic_lasso(n_obs: int, n_features: int, density: float, rng: np.random.Generator,
                    true_sparsity: float = 0.2, noise: float = 0.1):
    """Sparse design with a sparse planted weight vector. Returns (X, y, w_true)."""
    X = sp.random(n_obs, n_features, density=density, format="csc", random_state=rng,
                  data_rvs=lambda k: rng.normal(size=k))
    # every feature gets at least one observation so a_i > 0
    X = X.tolil()
    for i in range(n_features):
        if X[:, i].nnz == 0:
            X[int(rng.integers(0, n_obs)), i] = rng.normal()
    X = X.tocsc()
    w = np.where(rng.random(n_features) < true_sparsity, rng.normal(size=n_features) * 2, 0.0)
    y = X @ w + noise * rng.normal(size=n_obs)
    return X, y, w
