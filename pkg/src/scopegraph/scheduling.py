"""Tasks, the scheduler family and the set-scheduler plan compiler.

Every scheduler is safe for concurrent ``add_task`` / ``next_task`` calls.
``next_task`` returns ``None`` when it has nothing to hand out right now; the
engine decides whether that means the run is over (nothing in flight) or the
worker should wait.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .consistency import ConsistencyModel, exclusion_set
from .errors import ContractViolation, GraphError, UnsupportedOperation
from .graph import DataGraph


@dataclass(frozen=True, slots=True)
class Task:
    vertex: int
    function_id: int = 0
    priority: Optional[float] = None
    # plan node index, only set by the set scheduler
    node: int = field(default=-1, compare=False)


class SchedulerKind(enum.Enum):
    SYNCHRONOUS = "sync"
    ROUND_ROBIN = "round-robin"
    FIFO = "fifo"
    MULTIQUEUE = "multiqueue"
    PARTITIONED = "partitioned"
    PRIORITY = "priority"
    APPROX_PRIORITY = "approx-priority"
    SET = "set"

    @property
    def dynamic(self) -> bool:
        return self not in (SchedulerKind.SYNCHRONOUS, SchedulerKind.ROUND_ROBIN, SchedulerKind.SET)

    @property
    def prioritized(self) -> bool:
        return self in (SchedulerKind.PRIORITY, SchedulerKind.APPROX_PRIORITY)

    @property
    def strict(self) -> bool:
        return self in (SchedulerKind.FIFO, SchedulerKind.PRIORITY, SchedulerKind.ROUND_ROBIN,
                        SchedulerKind.SYNCHRONOUS)


class Scheduler:
    kind: SchedulerKind
    dynamic = True

    def add_task(self, task: Task, worker: Optional[int] = None):
        raise NotImplementedError

    def add_task_with_priority(self, task: Task, priority: float, worker: Optional[int] = None):
        self.add_task(replace(task, priority=float(priority)), worker)

    def next_task(self, worker: int = 0) -> Optional[Task]:
        raise NotImplementedError

    def task_done(self, task: Task):
        """Called by the engine once ``task`` has finished and released its scope."""

    def pending(self) -> int:
        raise NotImplementedError


class _Generated(Scheduler):
    dynamic = False

    def add_task(self, task, worker=None):
        raise UnsupportedOperation(f"{self.kind.value} scheduler generates its own tasks")


class RoundRobinScheduler(_Generated):
    kind = SchedulerKind.ROUND_ROBIN

    def __init__(self, num_vertices: int, sweeps: int = 1, function_id: int = 0):
        self.n = num_vertices
        self.total = num_vertices * sweeps
        self.function_id = function_id
        self._next = 0
        self._lock = threading.Lock()

    def next_task(self, worker=0):
        with self._lock:
            i = self._next
            if i >= self.total:
                return None
            self._next = i + 1
        return Task(i % self.n, self.function_id)

    def pending(self):
        return self.total - self._next


class SynchronousScheduler(_Generated):
    """Round-robin sweeps separated by barriers.

    Generation ``g + 1`` is released only after every task of generation ``g``
    has been reported done.
    """

    kind = SchedulerKind.SYNCHRONOUS

    def __init__(self, num_vertices: int, sweeps: int = 1, function_id: int = 0):
        self.n = num_vertices
        self.sweeps = sweeps if num_vertices else 0
        self.function_id = function_id
        self.generation = 0
        self._pos = 0
        self._inflight = 0
        self._lock = threading.Lock()

    def next_task(self, worker=0):
        with self._lock:
            if self.generation >= self.sweeps or self._pos >= self.n:
                return None
            v = self._pos
            self._pos += 1
            self._inflight += 1
        return Task(v, self.function_id)

    def task_done(self, task):
        with self._lock:
            self._inflight -= 1
            if self._pos >= self.n and self._inflight == 0:
                self.generation += 1
                self._pos = 0

    def pending(self):
        return max(0, (self.sweeps - self.generation) * self.n - self._pos)


class FifoScheduler(Scheduler):
    kind = SchedulerKind.FIFO

    def __init__(self):
        self._q: deque[Task] = deque()
        self._lock = threading.Lock()

    def add_task(self, task, worker=None):
        with self._lock:
            self._q.append(task)

    def next_task(self, worker=0):
        with self._lock:
            return self._q.popleft() if self._q else None

    def pending(self):
        return len(self._q)


class MultiQueueFifoScheduler(Scheduler):
    """Per-worker FIFO queues; idle workers steal from the longest queue."""

    kind = SchedulerKind.MULTIQUEUE

    def __init__(self, num_queues: int):
        self.queues = [deque() for _ in range(max(1, num_queues))]
        self._lock = threading.Lock()
        self._rr = itertools.count()

    def _queue_for(self, task, worker):
        if worker is None:
            return next(self._rr) % len(self.queues)
        return worker % len(self.queues)

    def add_task(self, task, worker=None):
        with self._lock:
            self.queues[self._queue_for(task, worker)].append(task)

    def next_task(self, worker=0):
        with self._lock:
            own = self.queues[worker % len(self.queues)]
            if own:
                return own.popleft()
            victim = max(self.queues, key=len)
            return victim.popleft() if victim else None

    def pending(self):
        return sum(map(len, self.queues))


class PartitionedFifoScheduler(MultiQueueFifoScheduler):
    """Static vertex-hash partitions, one per worker, no stealing."""

    kind = SchedulerKind.PARTITIONED

    def _queue_for(self, task, worker):
        return task.vertex % len(self.queues)

    def next_task(self, worker=0):
        with self._lock:
            own = self.queues[worker % len(self.queues)]
            return own.popleft() if own else None


class PriorityScheduler(Scheduler):
    """Global max-priority queue.

    Duplicate (vertex, function) entries are merged, keeping the larger
    priority. Equal priorities pop in first-insertion order.
    """

    kind = SchedulerKind.PRIORITY

    def __init__(self):
        self._heap: list = []
        self._pending: dict[tuple[int, int], tuple[float, int]] = {}
        self._seq = itertools.count()
        self._lock = threading.Lock()

    def add_task(self, task, worker=None):
        p = 0.0 if task.priority is None else float(task.priority)
        key = (task.vertex, task.function_id)
        with self._lock:
            cur = self._pending.get(key)
            if cur is None:
                seq = next(self._seq)
            elif p > cur[0]:
                seq = cur[1]
            else:
                return
            self._pending[key] = (p, seq)
            heapq.heappush(self._heap, (-p, seq, key))

    def next_task(self, worker=0):
        with self._lock:
            heap, pending = self._heap, self._pending
            while heap:
                negp, seq, key = heapq.heappop(heap)
                if pending.get(key) == (-negp, seq):
                    del pending[key]
                    return Task(key[0], key[1], -negp)
            return None

    def pending(self):
        return len(self._pending)


class ApproxPriorityScheduler(Scheduler):
    """Per-worker heaps; an idle worker steals from the heap with the largest top."""

    kind = SchedulerKind.APPROX_PRIORITY

    def __init__(self, num_queues: int):
        self.heaps: list[list] = [[] for _ in range(max(1, num_queues))]
        self._pending: dict[tuple[int, int], tuple[float, int, int]] = {}
        self._seq = itertools.count()
        self._lock = threading.Lock()

    def add_task(self, task, worker=None):
        p = 0.0 if task.priority is None else float(task.priority)
        key = (task.vertex, task.function_id)
        with self._lock:
            cur = self._pending.get(key)
            if cur is None:
                q = (task.vertex if worker is None else worker) % len(self.heaps)
                seq = next(self._seq)
            elif p > cur[0]:
                _, seq, q = cur
            else:
                return
            self._pending[key] = (p, seq, q)
            heapq.heappush(self.heaps[q], (-p, seq, key))

    def _clean(self, heap):
        pending = self._pending
        while heap:
            negp, seq, key = heap[0]
            cur = pending.get(key)
            if cur is not None and cur[0] == -negp and cur[1] == seq:
                return
            heapq.heappop(heap)

    def next_task(self, worker=0):
        with self._lock:
            own = self.heaps[worker % len(self.heaps)]
            self._clean(own)
            if not own:
                for h in self.heaps:
                    self._clean(h)
                live = [h for h in self.heaps if h]
                if not live:
                    return None
                own = min(live, key=lambda h: h[0])
            negp, seq, key = heapq.heappop(own)
            del self._pending[key]
            return Task(key[0], key[1], -negp)

    def pending(self):
        return len(self._pending)


# -- set scheduler ------------------------------------------------------------

class PlanStatus(enum.Enum):
    BLOCKED = "blocked"
    EXHAUSTED = "exhausted"


BLOCKED = PlanStatus.BLOCKED
EXHAUSTED = PlanStatus.EXHAUSTED


class ExecutionPlan:
    """Dependency DAG over the tasks of a set schedule.

    ``deps[i]`` holds indices strictly smaller than ``i``. Issuing picks the
    lowest-index ready node so single-worker runs are deterministic.
    """

    def __init__(self, nodes: list[Task], deps: list[list[int]]):
        self.nodes = nodes
        self.deps = deps
        self.dependents: list[list[int]] = [[] for _ in nodes]
        for i, ds in enumerate(deps):
            for d in ds:
                if d >= i:
                    raise ValueError("plan dependencies must point to earlier nodes")
                self.dependents[d].append(i)
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        self.indegree = [len(ds) for ds in self.deps]
        self._state = [0] * len(self.nodes)  # 0 waiting, 1 issued, 2 done
        self._ready = [i for i, k in enumerate(self.indegree) if k == 0]
        heapq.heapify(self._ready)
        self.completed = 0

    def __len__(self):
        return len(self.nodes)

    def next_ready(self):
        with self._lock:
            if self._ready:
                i = heapq.heappop(self._ready)
                self._state[i] = 1
                return replace(self.nodes[i], node=i)
            return EXHAUSTED if self.completed == len(self.nodes) else BLOCKED

    def complete(self, i: int):
        with self._lock:
            if not (0 <= i < len(self.nodes)) or self._state[i] != 1:
                raise ContractViolation(f"plan node {i} completed without being issued")
            self._state[i] = 2
            self.completed += 1
            indeg = self.indegree
            for j in self.dependents[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(self._ready, j)


def plan_next_ready(plan: ExecutionPlan):
    return plan.next_ready()


def plan_complete(plan: ExecutionPlan, i: int):
    plan.complete(i)


def compile_set_schedule(graph: DataGraph, seq: Iterable[tuple[Iterable[int], int]],
                         model: ConsistencyModel, reduce: bool = True) -> ExecutionPlan:
    """Rewrite a sequence of (vertex set, function id) pairs as a task DAG.

    A node depends on the latest earlier node touching each entity of its
    exclusion set. With ``reduce`` the transitively implied edges among those
    are dropped, which leaves the partial order unchanged.
    """
    nodes: list[Task] = []
    deps: list[list[int]] = []
    last: dict = {}
    excl_cache: dict[int, frozenset] = {}
    n = graph.num_vertices
    for vertices, fid in seq:
        for v in sorted(set(vertices)):
            if not (isinstance(v, int) and 0 <= v < n):
                raise GraphError(f"unknown vertex {v!r} in set schedule")
            ents = excl_cache.get(v)
            if ents is None:
                ents = excl_cache[v] = exclusion_set(graph, v, model).entities
            i = len(nodes)
            ds = sorted({last[e] for e in ents if e in last})
            if reduce and len(ds) > 1:
                ds = _drop_implied(ds, deps)
            nodes.append(Task(v, fid))
            deps.append(ds)
            for e in ents:
                last[e] = i
    return ExecutionPlan(nodes, deps)


def _drop_implied(ds: list[int], deps: list[list[int]]) -> list[int]:
    # d is implied if it is an ancestor of another candidate; ancestors of a
    # node have smaller indices, so the search never goes below min(ds).
    lo = ds[0]
    keep = []
    cands = set(ds)
    implied: set[int] = set()
    for top in reversed(ds):
        if top in implied:
            continue
        stack = list(deps[top])
        seen = set()
        while stack:
            x = stack.pop()
            if x < lo or x in seen:
                continue
            seen.add(x)
            if x in cands:
                implied.add(x)
            stack.extend(deps[x])
    for d in ds:
        if d not in implied:
            keep.append(d)
    return keep


class SetScheduler(_Generated):
    kind = SchedulerKind.SET

    def __init__(self, plan: ExecutionPlan):
        self.plan = plan

    def next_task(self, worker=0):
        t = self.plan.next_ready()
        return t if isinstance(t, Task) else None

    def task_done(self, task):
        self.plan.complete(task.node)

    def pending(self):
        return len(self.plan) - self.plan.completed


def make_scheduler(kind: SchedulerKind | str, graph: DataGraph, workers: int = 1, sweeps: int = 1,
                   function_id: int = 0, plan: Optional[ExecutionPlan] = None) -> Scheduler:
    kind = SchedulerKind(kind) if isinstance(kind, str) else kind
    if kind is SchedulerKind.ROUND_ROBIN:
        return RoundRobinScheduler(graph.num_vertices, sweeps, function_id)
    if kind is SchedulerKind.SYNCHRONOUS:
        return SynchronousScheduler(graph.num_vertices, sweeps, function_id)
    if kind is SchedulerKind.FIFO:
        return FifoScheduler()
    if kind is SchedulerKind.MULTIQUEUE:
        return MultiQueueFifoScheduler(workers)
    if kind is SchedulerKind.PARTITIONED:
        return PartitionedFifoScheduler(workers)
    if kind is SchedulerKind.PRIORITY:
        return PriorityScheduler()
    if kind is SchedulerKind.APPROX_PRIORITY:
        return ApproxPriorityScheduler(workers)
    if plan is None:
        raise ValueError("set scheduler needs a compiled plan")
    return SetScheduler(plan)
