"""Loopy / residual belief propagation on pairwise MRFs with Laplace smoothing.

Vertex data holds the node potential and current belief; each directed edge
u->v holds the message m_{u->v}. Per-axis smoothing parameters live in the
shared table under ``"lambda"``, so a background sync can learn them while
inference runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..consistency import ConsistencyModel
from ..engine import Engine, EngineConfig, RunStats
from ..errors import DegeneratePotentialError
from ..graph import DataGraph, SharedDataTable, SyncRegistration
from ..scheduling import SchedulerKind, Task
from .mrf import gaussian_node_potential, grid_edges, label_distance

LAMBDA_KEY = "lambda"
LAMBDA_MIN = 1e-3


@dataclass
class BpVertex:
    node_potential: np.ndarray
    belief: np.ndarray
    observation: float = 0.0
    # per-axis sum of E|x_v - x_t| over forward edges, and their count
    edge_stat: Optional[np.ndarray] = None
    edge_count: Optional[np.ndarray] = None
    visits: int = 0


@dataclass
class BpEdge:
    message: np.ndarray
    old_message: np.ndarray
    axis: int = 0
    # sender's cavity distribution (node potential times all other incoming
    # messages) from the last time the message was computed
    cavity: Optional[np.ndarray] = None
    # evidence-free message and cavity, maintained only when learning from
    # the prior model
    prior_message: Optional[np.ndarray] = None
    prior_cavity: Optional[np.ndarray] = None


def build_bp_graph(potentials: Sequence[np.ndarray], edges, n_axes: int = 1,
                   observations: Optional[Sequence[float]] = None) -> DataGraph:
    """``edges`` are undirected (u, v) or (u, v, axis); both directions are added."""
    g = DataGraph()
    for i, pot in enumerate(potentials):
        pot = np.asarray(pot, dtype=float)
        mass = pot.sum()
        g.add_vertex(BpVertex(
            node_potential=pot,
            # a zero-mass potential is reported by the first update
            belief=pot / mass if mass > 0 else np.full(len(pot), 1.0 / len(pot)),
            observation=0.0 if observations is None else float(observations[i]),
            edge_stat=np.zeros(n_axes),
            edge_count=np.zeros(n_axes),
        ))
    for e in edges:
        u, v = e[0], e[1]
        axis = e[2] if len(e) > 2 else 0
        k = len(g.vertex_data[u].node_potential)
        for a, b in ((u, v), (v, u)):
            m = np.full(k, 1.0 / k)
            g.add_edge(a, b, BpEdge(m, m.copy(), axis))
    return g


def _cavities(pot, msgs):
    """Return (product of everything, cavity excluding in-message j for each j)."""
    d = len(msgs)
    if not d:
        return pot, []
    msgs = np.stack(msgs)
    prefix = np.ones((d + 1, len(pot)))
    np.cumprod(msgs, axis=0, out=prefix[1:])
    suffix = np.ones((d + 1, len(pot)))
    np.cumprod(msgs[::-1], axis=0, out=suffix[1:])
    return pot * prefix[d], [pot * prefix[j] * suffix[d - j - 1] for j in range(d)]


STATS_MODES = (None, "posterior", "prior")


def make_bp_update(bound: float = 1e-5, lambda_key: str = LAMBDA_KEY, stats: Optional[str] = None):
    """Residual BP update: recompute belief and all outgoing messages.

    Targets whose message moved by more than ``bound`` (L1) are rescheduled
    with the residual as priority.

    ``stats`` controls what the vertex records for the parameter-learning
    sync: expected label disagreement on its forward edges under the
    posterior beliefs (``"posterior"``) or under the evidence-free model
    (``"prior"``). The prior mode runs a second message set with flat node
    potentials alongside the usual one.
    """
    if stats not in STATS_MODES:
        raise ValueError(f"stats must be one of {STATS_MODES}, got {stats!r}")
    use_prior = stats == "prior"

    def bp_update(scope, table, sink):
        graph = scope.graph
        v = scope.vertex
        vd = scope.data
        pot = vd.node_potential
        k = len(pot)
        lam = table[lambda_key]
        dist = label_distance(k)
        psis = [np.exp(-l * dist) for l in lam]

        in_edges = scope.in_edges
        edata = graph.edge_data
        esrc = graph.edge_source
        prod_all, cavs = _cavities(pot, [edata[e].message for e in in_edges])
        z = prod_all.sum()
        if not z > 0:
            raise DegeneratePotentialError(f"belief at vertex {v} has zero mass")
        vd.belief = prod_all / z
        if use_prior:
            flat = np.ones(k)
            uniform = flat / k
            pprod, pcavs = _cavities(flat, [uniform if edata[e].prior_message is None
                                            else edata[e].prior_message for e in in_edges])

        row = {esrc[e]: j for j, e in enumerate(in_edges)}
        for e in scope.out_edges:
            t = graph.edge_target[e]
            ed = edata[e]
            j = row.get(t)
            cavity = prod_all if j is None else cavs[j]
            psi = psis[ed.axis]
            new = cavity @ psi
            s = new.sum()
            if not s > 0:
                raise DegeneratePotentialError(f"message {v}->{t} has zero mass")
            new /= s
            residual = float(np.abs(new - ed.message).sum())
            ed.old_message = ed.message
            ed.message = new
            ed.cavity = cavity
            if use_prior:
                pcav = pprod if j is None else pcavs[j]
                pnew = pcav @ psi
                pnew /= pnew.sum()
                old = uniform if ed.prior_message is None else ed.prior_message
                residual = max(residual, float(np.abs(pnew - old).sum()))
                ed.prior_message = pnew
                ed.prior_cavity = pcav
            if residual > bound:
                sink.add(t, priority=residual)

        if stats is not None:
            # pairwise beliefs on forward in-edges u->v (u < v):
            # b(x_u, x_v) ~ cavity_u(x_u) psi(x_u, x_v) cavity_v(x_v)
            stat = np.zeros_like(vd.edge_stat)
            count = np.zeros_like(vd.edge_count)
            mine_all = pcavs if use_prior else cavs
            for j, e in enumerate(in_edges):
                ed = edata[e]
                theirs = ed.prior_cavity if use_prior else ed.cavity
                if esrc[e] > v or theirs is None:
                    continue
                pair = theirs[:, None] * psis[ed.axis] * mine_all[j][None, :]
                stat[ed.axis] += (pair * dist).sum() / pair.sum()
                count[ed.axis] += 1
            vd.edge_stat = stat
            vd.edge_count = count

    return bp_update


def beliefs(graph: DataGraph) -> np.ndarray:
    return np.stack([vd.belief for vd in graph.vertex_data])


def max_residual(graph: DataGraph, table: SharedDataTable, lambda_key: str = LAMBDA_KEY) -> float:
    """Largest L1 change one more full round of message updates would make."""
    lam = table[lambda_key]
    worst = 0.0
    for e, ed in enumerate(graph.edge_data):
        v, t = graph.endpoints(e)
        vd = graph.vertex_data[v]
        k = len(vd.node_potential)
        cav = vd.node_potential.copy()
        for f in graph.in_edges(v):
            if graph.edge_source[f] != t:
                cav *= graph.edge_data[f].message
        new = cav @ np.exp(-lam[ed.axis] * label_distance(k))
        new /= new.sum()
        worst = max(worst, float(np.abs(new - ed.message).sum()))
    return worst


def run_bp(graph: DataGraph, table: SharedDataTable, workers: int = 1,
           scheduler: SchedulerKind | str = SchedulerKind.PRIORITY,
           model: ConsistencyModel = ConsistencyModel.EDGE, bound: float = 1e-5,
           sweeps: int = 100, stats: Optional[str] = None, termination=()) -> RunStats:
    scheduler = SchedulerKind(scheduler) if isinstance(scheduler, str) else scheduler
    cfg = EngineConfig(workers=workers, model=model, scheduler=scheduler, sweeps=sweeps,
                       termination=list(termination))
    eng = Engine(graph, [make_bp_update(bound, stats=stats)], table, cfg)
    tasks = () if not scheduler.dynamic else [Task(v, 0, np.inf) for v in range(graph.num_vertices)]
    return eng.run(tasks)


# -- parameter learning ---------------------------------------------------------

def empirical_edge_stats(labels: np.ndarray, edges, n_axes: int) -> np.ndarray:
    """Mean |label_u - label_v| per axis over the given undirected edges."""
    labels = np.asarray(labels).ravel()
    tot = np.zeros(n_axes)
    cnt = np.zeros(n_axes)
    for u, v, a in edges:
        tot[a] += abs(labels[u] - labels[v])
        cnt[a] += 1
    return tot / np.maximum(cnt, 1)


def axis_average_proxy(observations: np.ndarray, k: int) -> list[np.ndarray]:
    """Per-axis smoothed label images: observations averaged with their two
    neighbours along that axis, rounded onto the label set."""
    obs = np.asarray(observations, dtype=float)
    out = []
    for axis in (1, 0):  # axis 0 runs along columns (numpy axis 1)
        pad = np.pad(obs, [(1, 1) if a == axis else (0, 0) for a in range(2)], mode="edge")
        sl = [slice(None)] * 2
        parts = []
        for off in (0, 1, 2):
            sl[axis] = slice(off, off + obs.shape[axis])
            parts.append(pad[tuple(sl)])
        out.append(np.clip(np.rint(sum(parts) / 3.0), 0, k - 1))
    return out


def proxy_edge_stats(observations: np.ndarray, k: int) -> np.ndarray:
    h, w = observations.shape
    edges = grid_edges(h, w)
    proxies = axis_average_proxy(observations, k)
    return np.array([empirical_edge_stats(proxies[a], [e for e in edges if e[2] == a], 2)[a]
                     for a in range(2)])


class ParameterLearner:
    """Fold/apply pair that takes a moment-matching gradient step on lambda.

    The fold sums the per-vertex disagreement statistics written by the BP
    update; apply compares their per-edge mean against the empirical
    statistic and moves lambda up when the model disagrees more than the
    data does.
    """

    def __init__(self, table: SharedDataTable, empirical: np.ndarray, step: float = 1.0,
                 lambda_key: str = LAMBDA_KEY, lambda_min: float = LAMBDA_MIN):
        self.table = table
        self.empirical = np.asarray(empirical, dtype=float)
        self.step = step
        self.lambda_key = lambda_key
        self.lambda_min = lambda_min
        self.history: list[np.ndarray] = []
        n = len(self.empirical)
        self.initial = np.zeros((2, n))

    def fold(self, vd: BpVertex, acc):
        acc[0] += vd.edge_stat
        acc[1] += vd.edge_count
        return acc

    @staticmethod
    def merge(a, b):
        return a + b

    def apply(self, acc):
        lam = np.asarray(self.table.get(self.lambda_key), dtype=float)
        # axes with no statistics yet get a zero gradient
        seen = acc[1] > 0
        model = np.where(seen, acc[0] / np.maximum(acc[1], 1), self.empirical)
        new = np.maximum(self.lambda_min, lam + self.step * (model - self.empirical))
        self.history.append(new)
        return new

    def registration(self, period: Optional[float] = None, key: str = "lambda") -> SyncRegistration:
        return SyncRegistration(key=key, fold=self.fold, apply=self.apply, initial=self.initial,
                                merge=self.merge, period=period)

    def converged(self, tol: float, window: int = 3) -> bool:
        h = self.history
        if len(h) < window + 1:
            return False
        return all(np.max(np.abs(h[-i] - h[-i - 1])) < tol for i in range(1, window + 1))


@dataclass
class LearningResult:
    lam: np.ndarray
    rounds: int
    converged: bool
    updates: int
    wall_time: float
    history: list = field(default_factory=list)


def _learning_table(n_axes: int, lam0) -> SharedDataTable:
    lam0 = np.full(n_axes, 1.0) if lam0 is None else np.asarray(lam0, dtype=float)
    return SharedDataTable({LAMBDA_KEY: lam0.copy()})


def learn_sequential(graph: DataGraph, empirical: np.ndarray, lam0=None, step: float = 1.0,
                     bound: float = 1e-5, tol: float = 1e-4, max_rounds: int = 500, workers: int = 1,
                     scheduler: SchedulerKind | str = SchedulerKind.PRIORITY,
                     model: ConsistencyModel = ConsistencyModel.EDGE,
                     table: Optional[SharedDataTable] = None) -> LearningResult:
    """Learn-then-infer baseline: BP to convergence, one gradient step, repeat."""
    table = table if table is not None else _learning_table(len(empirical), lam0)
    learner = ParameterLearner(table, empirical, step)
    table.register_sync(learner.registration())
    scheduler = SchedulerKind(scheduler) if isinstance(scheduler, str) else scheduler
    eng = Engine(graph, [make_bp_update(bound, stats="prior")], table,
                 EngineConfig(workers=workers, model=model, scheduler=scheduler, sweeps=1000))
    updates = 0
    wall = 0.0
    rounds = 0
    while rounds < max_rounds and not learner.converged(tol):
        tasks = [Task(v, 0, np.inf) for v in range(graph.num_vertices)] if scheduler.dynamic else ()
        st = eng.run(tasks)
        updates += st.updates_applied
        wall += st.wall_time
        eng.sync_now(LAMBDA_KEY)
        rounds += 1
    return LearningResult(np.asarray(table[LAMBDA_KEY]), rounds, learner.converged(tol),
                          updates, wall, learner.history)


def _sync_trigger(update, vertex: int, every: int, key: str):
    """Wrap ``update`` so that ``vertex`` requests a sync on every ``every``-th visit."""

    def triggered(scope, table, sink):
        update(scope, table, sink)
        if scope.vertex == vertex:
            vd = scope.data
            vd.visits += 1
            if vd.visits % every == 0:
                sink.request_sync(key)

    return triggered


def learn_concurrent(graph: DataGraph, empirical: np.ndarray, lam0=None, step: float = 1.0,
                     period: Optional[float] = None, sync_every: int = 1, tol: float = 1e-4,
                     max_sweeps: int = 100000, workers: int = 1,
                     model: ConsistencyModel = ConsistencyModel.EDGE,
                     table: Optional[SharedDataTable] = None) -> LearningResult:
    """Simultaneous learning and inference.

    Round-robin BP keeps running while a sync takes a gradient step on
    lambda, either from the background thread every ``period`` seconds or,
    when ``period`` is None, on request once every ``sync_every`` sweeps
    (which keeps single-worker runs deterministic). The run ends once lambda
    stops moving. Messages are never restarted, so at the end the posterior
    beliefs already correspond to (nearly) the final lambda.
    """
    table = table if table is not None else _learning_table(len(empirical), lam0)
    learner = ParameterLearner(table, empirical, step)
    table.register_sync(learner.registration(period=period))
    update = make_bp_update(0.0, stats="prior")
    if period is None:
        if sync_every < 1:
            raise ValueError("sync_every must be >= 1")
        update = _sync_trigger(update, graph.num_vertices - 1, sync_every, LAMBDA_KEY)
    cfg = EngineConfig(workers=workers, model=model, scheduler=SchedulerKind.ROUND_ROBIN,
                       sweeps=max_sweeps, termination=[lambda _t: learner.converged(tol)])
    st = Engine(graph, [update], table, cfg).run()
    return LearningResult(np.asarray(table[LAMBDA_KEY]), len(learner.history), learner.converged(tol),
                          st.updates_applied, st.wall_time, learner.history)


# -- image denoising ---------------------------------------------------------------

def grid_bp_graph(observations: np.ndarray, k: int, sigma: float) -> DataGraph:
    h, w = observations.shape
    pots = [gaussian_node_potential(o, k, sigma) for o in observations.ravel()]
    return build_bp_graph(pots, grid_edges(h, w), n_axes=2, observations=observations.ravel())


def synthetic_image(height: int, width: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant label image made of blocks."""
    bs = max(2, min(height, width) // 4)
    r = np.arange(height)[:, None] // bs
    c = np.arange(width)[None, :] // bs
    offset = int(rng.integers(0, k))
    return ((r + 2 * c + offset) % k).astype(int)


def sample_laplace_grid(height: int, width: int, k: int, lambdas, sweeps: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Draw a label image from the Laplace-smoothed grid prior by checkerboard Gibbs."""
    lam_x, lam_y = lambdas
    x = rng.integers(0, k, size=(height, width))
    labels = np.arange(k)
    parity = (np.arange(height)[:, None] + np.arange(width)[None, :]) % 2
    for _ in range(sweeps):
        for colour in (0, 1):
            logp = np.zeros((height, width, k))
            for shift, lam, ax in ((1, lam_x, 1), (-1, lam_x, 1), (1, lam_y, 0), (-1, lam_y, 0)):
                nb = np.roll(x, shift, axis=ax)
                valid = np.ones((height, width), bool)
                if ax == 1:
                    if shift == 1:
                        valid[:, 0] = False
                    else:
                        valid[:, -1] = False
                else:
                    if shift == 1:
                        valid[0, :] = False
                    else:
                        valid[-1, :] = False
                logp -= lam * np.abs(labels[None, None, :] - nb[:, :, None]) * valid[:, :, None]
            p = np.exp(logp - logp.max(axis=2, keepdims=True))
            cdf = np.cumsum(p, axis=2)
            u = rng.random((height, width, 1)) * cdf[:, :, -1:]
            draw = (cdf < u).sum(axis=2)
            x = np.where(parity == colour, draw, x)
    return x


def expected_labels(graph: DataGraph) -> np.ndarray:
    b = beliefs(graph)
    return b @ np.arange(b.shape[1])
