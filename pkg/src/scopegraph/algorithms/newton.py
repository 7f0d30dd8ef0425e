"""Interior-point outer loop for l1-regularised least squares.

Solves ``min_w |Xw - y|^2 + gamma |w|^2 + lam |w|_1`` (elastic net) with a
log-barrier Newton method. The ridge term is folded into an augmented design
``[X; sqrt(gamma) I]`` so the standard Lasso dual point gives a duality gap.
Each Newton system is solved by GaBP on a graph over the features that is
built once; its messages carry over from one iteration to the next.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..consistency import ConsistencyModel
from ..graph import SharedDataTable, SyncRegistration
from ..engine import sync_now
from ..scheduling import SchedulerKind
from .gabp import GabpSolver, build_gabp_graph, means

GAP_KEY = "duality_gap"


@dataclass
class NewtonResult:
    w: np.ndarray
    gap: float
    iterations: int
    converged: bool
    gaps: list = field(default_factory=list)
    gabp_updates: list = field(default_factory=list)


def _gap_fold(vd, acc):
    acc[0] += vd.w * vd.q
    acc[1] += vd.w * vd.c
    acc[2] += abs(vd.w)
    acc[3] = max(acc[3], abs(vd.q - vd.c))
    return acc


def _gap_merge(a, b):
    return [a[0] + b[0], a[1] + b[1], a[2] + b[2], max(a[3], b[3])]


def duality_gap_registration(lam: float, yty: float) -> SyncRegistration:
    """Sync computing primal - dual for the (augmented) Lasso.

    Per feature the fold needs w_i, q_i = (X~'X~ w)_i and c_i = (X~'y)_i; then
    z'z = w'q - 2 w'c + y'y, and the dual point nu = 2 s z with
    s = min(1, lam / |2 X~'z|_inf).
    """

    def apply(acc):
        wq, wc, l1, maxg = acc
        zz = wq - 2.0 * wc + yty
        zy = wc - yty
        g = 2.0 * maxg
        s = 1.0 if g <= lam else lam / g
        primal = zz + lam * l1
        dual = -s * s * zz - 2.0 * s * zy
        return primal - dual

    return SyncRegistration(GAP_KEY, _gap_fold, apply, initial=[0.0, 0.0, 0.0, 0.0], merge=_gap_merge)


class _FeatureData:
    __slots__ = ("a_ii", "b", "mean", "precision", "updates", "w", "u", "q", "c")

    def __init__(self, c):
        self.a_ii = 1.0
        self.b = 0.0
        self.mean = 0.0
        self.precision = 0.0
        self.updates = 0
        self.w = 0.0
        self.u = 1.0
        self.q = 0.0
        self.c = float(c)


def l1_interior_point(X, y, lam: float, gamma: float = 0.0, eps: float = 1e-6, workers: int = 1,
                      scheduler: SchedulerKind | str = SchedulerKind.PRIORITY,
                      model: ConsistencyModel = ConsistencyModel.EDGE, max_iter: int = 100,
                      warm_start: bool = True, bound: float = 1e-12, mu: float = 2.0,
                      alpha: float = 0.01, beta: float = 0.5) -> NewtonResult:
    X = sp.csr_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    Q = (X.T @ X).tocsr() + gamma * sp.identity(d, format="csr")
    c = np.asarray(X.T @ y).ravel()
    yty = float(y @ y)

    # graph structure: one vertex per feature, edges on the sparsity of X'X
    graph = build_gabp_graph(sp.diags(np.ones(d)) + (Q - sp.diags(Q.diagonal())), np.zeros(d))
    for i in range(d):
        fd = _FeatureData(c[i])
        graph.vertex_data[i] = fd
    table = SharedDataTable()
    table.register_sync(duality_gap_registration(lam, yty))
    solver = GabpSolver(graph, workers, scheduler, model, bound)

    w = np.zeros(d)
    u = np.ones(d)

    def publish(w, u):
        q = Q @ w
        for i, fd in enumerate(graph.vertex_data):
            fd.w, fd.u, fd.q = float(w[i]), float(u[i]), float(q[i])

    def gap():
        return sync_now(graph, table, GAP_KEY, solver.engine._lock_table(), model, workers)

    def phi(w, u, t):
        f1, f2 = u + w, u - w
        if np.any(f1 <= 0) or np.any(f2 <= 0):
            return np.inf
        r = X @ w - y
        return t * (r @ r + gamma * w @ w + lam * u.sum()) - np.log(f1).sum() - np.log(f2).sum()

    publish(w, u)
    current = gap()
    gaps = [current]
    updates = []
    t = min(max(1.0, 1.0 / lam), 2.0 * d / 1e-3) if lam > 0 else 1.0
    s = 1.0
    it = 0
    while current >= eps and it < max_iter:
        it += 1
        if s >= 0.5:
            t = max(min(2.0 * d * mu / max(current, 1e-300), mu * t), t)
        # refresh the Newton system on the existing graph
        q1, q2 = 1.0 / (u + w), 1.0 / (u - w)
        d1, d2 = q1 ** 2 + q2 ** 2, q1 ** 2 - q2 ** 2
        grad_w = t * 2.0 * (Q @ w - c) - q1 + q2
        grad_u = t * lam - q1 - q2
        # the system is divided by t so GaBP messages stay O(1) as t grows
        diag = 2.0 * Q.diagonal() + (d1 - d2 ** 2 / d1) / t
        rhs = (-grad_w + (d2 / d1) * grad_u) / t
        for i, fd in enumerate(graph.vertex_data):
            fd.a_ii = float(diag[i])
            fd.b = float(rhs[i])
        if it == 1:
            for e, ed in enumerate(graph.edge_data):
                a, b_ = graph.endpoints(e)
                ed.a_ij = float(2.0 * Q[a, b_])
        if not warm_start:
            solver.reset_messages()
        stats = solver.solve()
        updates.append(stats.updates_applied)
        dw = means(graph)
        du = -(grad_u + d2 * dw) / d1
        # backtracking line search on the barrier objective
        f0 = phi(w, u, t)
        slope = grad_w @ dw + grad_u @ du
        s = 1.0
        while True:
            nw, nu = w + s * dw, u + s * du
            if phi(nw, nu, t) <= f0 + alpha * s * slope:
                break
            s *= beta
            if s < 1e-12:
                break
        w, u = nw, nu
        publish(w, u)
        current = gap()
        gaps.append(current)
    return NewtonResult(w, current, it, current < eps, gaps, updates)
