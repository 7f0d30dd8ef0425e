"""Shared-memory execution engine.

Workers repeatedly pull a task, lock the task vertex's scope under the
configured consistency model, run the update function on a scope view and
release. Tasks emitted by an update function are handed to the scheduler
only after its scope is released.
"""
from __future__ import annotations

import copy
import csv
import enum
import io
import threading
import time
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

from .consistency import ConsistencyModel, LockTable
from .errors import ContractViolation, UpdateFunctionError
from .graph import DataGraph, SharedDataTable, SyncRegistration, TableView
from .scheduling import ExecutionPlan, Scheduler, SchedulerKind, Task, make_scheduler

UpdateFunction = Callable[["ScopeView", TableView, "TaskSink"], None]
TerminationFunction = Callable[[TableView], bool]


class TerminationReason(enum.Enum):
    SCHEDULER_EXHAUSTED = "scheduler-exhausted"
    TERMINATION_FUNCTION = "termination-function"
    SWEEP_LIMIT = "sweep-limit"


@dataclass
class EngineConfig:
    workers: int = 1
    model: ConsistencyModel = ConsistencyModel.EDGE
    scheduler: SchedulerKind = SchedulerKind.FIFO
    sweeps: int = 1  # round-robin / synchronous only
    function_id: int = 0  # update function used by generated schedules
    termination: list = field(default_factory=list)
    sync_poll_interval: float = 0.005
    instrument: Optional[bool] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if isinstance(self.scheduler, str):
            self.scheduler = SchedulerKind(self.scheduler)
        if isinstance(self.model, str):
            self.model = ConsistencyModel.parse(self.model)


STATS_HEADER = ("workers", "scheduler", "model", "updates", "wall_time_s", "reason")


@dataclass
class RunStats:
    updates_applied: int
    wall_time: float
    per_worker_updates: list
    termination_reason: TerminationReason
    sync_counts: dict = field(default_factory=dict)
    workers: int = 1
    scheduler: str = ""
    model: str = ""

    def csv_row(self) -> list:
        return [self.workers, self.scheduler, self.model, self.updates_applied,
                f"{self.wall_time:.6f}", self.termination_reason.value]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(STATS_HEADER)
        w.writerow(self.csv_row())
        return buf.getvalue()


class ScopeView:
    """Access to the data inside one granted scope.

    Reads and writes outside the scope raise :class:`ContractViolation`.
    Graph *structure* (``view.graph``) may be inspected freely.
    """

    __slots__ = ("graph", "vertex", "scope")

    def __init__(self, graph: DataGraph, vertex: int):
        self.graph = graph
        self.vertex = vertex
        self.scope = graph.scope_of(vertex)

    @property
    def data(self):
        return self.graph.vertex_data[self.vertex]

    @data.setter
    def data(self, value):
        self.graph.vertex_data[self.vertex] = value

    @property
    def neighbors(self):
        return self.scope.neighbors

    @property
    def in_edges(self):
        return self.scope.in_edges

    @property
    def out_edges(self):
        return self.scope.out_edges

    def _check_vertex(self, u):
        if u != self.vertex:
            nb = self.scope.neighbors
            i = bisect_left(nb, u)
            if i == len(nb) or nb[i] != u:
                raise ContractViolation(f"vertex {u} is outside the scope of {self.vertex}")

    def _check_edge(self, e):
        g = self.graph
        if g.edge_source[e] != self.vertex and g.edge_target[e] != self.vertex:
            raise ContractViolation(f"edge {e} is outside the scope of {self.vertex}")

    def vertex_data(self, u: int):
        self._check_vertex(u)
        return self.graph.vertex_data[u]

    def set_vertex_data(self, u: int, value):
        self._check_vertex(u)
        self.graph.vertex_data[u] = value

    def edge_data(self, e: int):
        self._check_edge(e)
        return self.graph.edge_data[e]

    def set_edge_data(self, e: int, value):
        self._check_edge(e)
        self.graph.edge_data[e] = value

    def source(self, e: int) -> int:
        return self.graph.edge_source[e]

    def target(self, e: int) -> int:
        return self.graph.edge_target[e]

    def other(self, e: int) -> int:
        g = self.graph
        s = g.edge_source[e]
        return g.edge_target[e] if s == self.vertex else s


class TaskSink:
    """Collects tasks emitted by one update-function call."""

    __slots__ = ("function_id", "tasks", "sync_requests", "dynamic")

    def __init__(self, function_id: int, dynamic: bool):
        self.function_id = function_id
        self.dynamic = dynamic
        self.tasks: list[Task] = []
        self.sync_requests: list = []

    def add(self, vertex: int, function_id: Optional[int] = None, priority: Optional[float] = None):
        # generated schedules (round-robin, synchronous, set) ignore emitted tasks
        if self.dynamic:
            fid = self.function_id if function_id is None else function_id
            self.tasks.append(Task(vertex, fid, priority))

    def request_sync(self, key):
        """Run the sync for ``key`` once the current task has released its scope."""
        self.sync_requests.append(key)


def register_sync(table: SharedDataTable, reg: SyncRegistration):
    table.register_sync(reg)


def sync_now(graph: DataGraph, table: SharedDataTable, key: Hashable, locks: Optional[LockTable] = None,
             model: ConsistencyModel = ConsistencyModel.VERTEX, workers: int = 1):
    """Run the fold / merge / apply sync for ``key`` and store the result.

    Without a merge function (or with one worker) this is a single fold over
    vertices in ascending id order. With a merge function the id range is cut
    into ``workers`` contiguous chunks folded in parallel and merged left to
    right. When ``locks`` is given each fold step holds that vertex's scope.
    """
    try:
        reg = table.registrations[key]
    except KeyError:
        raise KeyError(f"no sync registered for key {key!r}") from None
    n = graph.num_vertices

    def fold_range(lo, hi):
        acc = copy.deepcopy(reg.initial)
        data, fold = graph.vertex_data, reg.fold
        if locks is None:
            for v in range(lo, hi):
                acc = fold(data[v], acc)
        else:
            for v in range(lo, hi):
                g = locks.acquire_scope(v, model)
                try:
                    acc = fold(data[v], acc)
                finally:
                    locks.release_scope(g)
        return acc

    if reg.merge is None or workers <= 1 or n < 2:
        acc = fold_range(0, n)
    else:
        k = min(workers, n)
        bounds = [n * i // k for i in range(k + 1)]
        parts: list = [None] * k
        errors: list = []

        def run(i):
            try:
                parts[i] = fold_range(bounds[i], bounds[i + 1])
            except BaseException as exc:  # surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=run, args=(i,)) for i in range(k)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        acc = parts[0]
        for p in parts[1:]:
            acc = reg.merge(acc, p)
    value = reg.apply(acc)
    table.set(key, value)
    return value


class Engine:
    """Runs update functions over a data graph.

    ``functions`` maps function ids to callables ``f(scope, table, sink)``.
    The same engine (and graph state) can be run repeatedly.
    """

    def __init__(self, graph: DataGraph, functions: Mapping[int, UpdateFunction] | Sequence[UpdateFunction],
                 table: Optional[SharedDataTable] = None, config: Optional[EngineConfig] = None):
        self.graph = graph
        if not isinstance(functions, Mapping):
            functions = dict(enumerate(functions))
        self.functions = dict(functions)
        self.table = table if table is not None else SharedDataTable()
        self.config = config or EngineConfig()
        self.locks: Optional[LockTable] = None
        self.scheduler: Optional[Scheduler] = None
        self._running = False

    def _lock_table(self) -> LockTable:
        g = self.graph
        lt = self.locks
        if lt is None or len(lt._locks) != g.num_vertices or lt.counters is not None and \
                len(lt.counters.edge_write) != g.num_edges:
            self.locks = lt = LockTable(g, self.config.instrument)
        return lt

    def sync_now(self, key, workers: Optional[int] = None):
        locks = self._lock_table()
        return sync_now(self.graph, self.table, key, locks, self.config.model,
                        self.config.workers if workers is None else workers)

    def run(self, tasks: Iterable[Task | int] = (), plan: Optional[ExecutionPlan] = None,
            scheduler: Optional[Scheduler] = None) -> RunStats:
        if self._running:
            raise ContractViolation("engine.run is not re-entrant")
        cfg = self.config
        graph = self.graph
        for fid in self._needed_functions(tasks, plan):
            if fid not in self.functions:
                raise KeyError(f"update function {fid} is not registered")
        if scheduler is None:
            kind = SchedulerKind.SET if plan is not None else cfg.scheduler
            scheduler = make_scheduler(kind, graph, cfg.workers, cfg.sweeps, cfg.function_id, plan)
        if plan is not None:
            plan.reset()
        self.scheduler = scheduler
        for t in tasks:
            if not isinstance(t, Task):
                t = Task(int(t), cfg.function_id)
            scheduler.add_task(t)

        graph.freeze()
        self._running = True
        try:
            return self._execute(scheduler)
        finally:
            self._running = False
            graph.unfreeze()

    def _needed_functions(self, tasks, plan):
        cfg = self.config
        if plan is not None:
            return {t.function_id for t in plan.nodes}
        if cfg.scheduler in (SchedulerKind.ROUND_ROBIN, SchedulerKind.SYNCHRONOUS):
            return {cfg.function_id}
        return set()

    def _execute(self, sched: Scheduler) -> RunStats:
        cfg = self.config
        graph, table = self.graph, self.table
        locks = self._lock_table()
        model = cfg.model
        functions = self.functions
        tview = table.view()
        terminators = list(cfg.termination)
        dynamic = sched.dynamic
        nworkers = cfg.workers

        cond = threading.Condition()
        state = {"active": 0, "waiting": 0, "stop": False, "reason": None, "error": None}
        per_worker = [0] * nworkers
        sync_counts: dict = {}
        sync_lock = threading.Lock()

        def halt(reason):
            with cond:
                if not state["stop"]:
                    state["stop"] = True
                    state["reason"] = reason
                cond.notify_all()

        def terminated():
            for fn in terminators:
                if fn(tview):
                    return True
            return False

        def do_sync(key):
            sync_now(graph, table, key, locks, model, nworkers)
            with sync_lock:
                sync_counts[key] = sync_counts.get(key, 0) + 1

        exhausted_reason = (TerminationReason.SWEEP_LIMIT
                            if sched.kind in (SchedulerKind.ROUND_ROBIN, SchedulerKind.SYNCHRONOUS)
                            else TerminationReason.SCHEDULER_EXHAUSTED)

        def worker(w):
            count = 0
            try:
                while True:
                    with cond:
                        while True:
                            if state["stop"]:
                                return
                            t = sched.next_task(w)
                            if t is not None:
                                state["active"] += 1
                                break
                            if state["active"] == 0:
                                state["stop"] = True
                                state["reason"] = exhausted_reason
                                cond.notify_all()
                                return
                            state["waiting"] += 1
                            cond.wait()
                            state["waiting"] -= 1
                    sink = TaskSink(t.function_id, dynamic)
                    try:
                        guard = locks.acquire_scope(t.vertex, model)
                        try:
                            functions[t.function_id](ScopeView(graph, t.vertex), tview, sink)
                        finally:
                            locks.release_scope(guard)
                        for nt in sink.tasks:
                            sched.add_task(nt, w)
                        sched.task_done(t)
                        count += 1
                        for key in sink.sync_requests:
                            do_sync(key)
                    except BaseException as exc:
                        with cond:
                            if state["error"] is None:
                                state["error"] = (t, exc)
                            state["active"] -= 1
                            state["stop"] = True
                            cond.notify_all()
                        return
                    stop = bool(terminators) and terminated()
                    with cond:
                        state["active"] -= 1
                        if stop and not state["stop"]:
                            state["stop"] = True
                            state["reason"] = TerminationReason.TERMINATION_FUNCTION
                        if state["waiting"] or state["stop"] or state["active"] == 0:
                            cond.notify_all()
            finally:
                per_worker[w] = count

        periodic = [r for r in table.registrations.values() if r.period]
        start = time.perf_counter()

        bg_error: list = []

        def background():
            due = {r.key: start + r.period for r in periodic}
            try:
                while not state["stop"]:
                    now = time.perf_counter()
                    synced = False
                    for r in periodic:
                        if now >= due[r.key]:
                            do_sync(r.key)
                            due[r.key] = time.perf_counter() + r.period
                            synced = True
                    if (synced or terminators) and terminators and terminated():
                        halt(TerminationReason.TERMINATION_FUNCTION)
                        return
                    time.sleep(cfg.sync_poll_interval)
            except BaseException as exc:
                bg_error.append(exc)
                halt(TerminationReason.TERMINATION_FUNCTION)

        if terminators and terminated():
            state["stop"] = True
            state["reason"] = TerminationReason.TERMINATION_FUNCTION

        threads = [threading.Thread(target=worker, args=(w,), name=f"worker-{w}", daemon=True)
                   for w in range(nworkers)]
        bg = threading.Thread(target=background, name="sync", daemon=True) if (periodic or terminators) else None
        for t in threads:
            t.start()
        if bg is not None:
            bg.start()
        for t in threads:
            t.join()
        halt(state["reason"])
        if bg is not None:
            bg.join()
        wall = time.perf_counter() - start

        if state["error"] is not None:
            t, exc = state["error"]
            raise UpdateFunctionError(t.vertex, t.function_id, exc) from exc
        if bg_error:
            raise bg_error[0]
        return RunStats(
            updates_applied=sum(per_worker),
            wall_time=wall,
            per_worker_updates=per_worker,
            termination_reason=state["reason"],
            sync_counts=sync_counts,
            workers=nworkers,
            scheduler=sched.kind.value,
            model=model.name.lower(),
        )


def run(graph: DataGraph, config: EngineConfig, functions, tasks: Iterable = (),
        plan: Optional[ExecutionPlan] = None, table: Optional[SharedDataTable] = None) -> RunStats:
    return Engine(graph, functions, table, config).run(tasks, plan)
