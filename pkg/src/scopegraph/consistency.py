"""Consistency models, exclusion sets and the ordered scope-locking protocol.

Each vertex owns one reader/writer lock. Edge data is protected through the
locks of its endpoints: anyone writing an edge holds a write lock on one
endpoint and at least a read lock on the other. A scope's locks are always
taken in ascending vertex order, so no cycle of waiters can form.
"""
from __future__ import annotations

import enum
import os
import threading
from dataclasses import dataclass

from .errors import ContractViolation, GraphError
from .graph import DataGraph

DEBUG_ENV = "SCOPEGRAPH_DEBUG_LOCKS"


class ConsistencyModel(enum.IntEnum):
    # ordered by strength
    VERTEX = 0
    EDGE = 1
    FULL = 2

    @classmethod
    def parse(cls, name: str) -> "ConsistencyModel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown consistency model {name!r}") from None


@dataclass(frozen=True)
class ExclusionSet:
    vertices: frozenset
    edges: frozenset

    @property
    def entities(self) -> frozenset:
        return frozenset(("v", v) for v in self.vertices) | frozenset(("e", e) for e in self.edges)

    def intersects(self, other: "ExclusionSet") -> bool:
        return not (self.vertices.isdisjoint(other.vertices) and self.edges.isdisjoint(other.edges))

    def __le__(self, other: "ExclusionSet") -> bool:
        return self.vertices <= other.vertices and self.edges <= other.edges


def exclusion_set(graph: DataGraph, v: int, model: ConsistencyModel) -> ExclusionSet:
    scope = graph.scope_of(v)
    if model == ConsistencyModel.VERTEX:
        return ExclusionSet(frozenset((v,)), frozenset())
    edges = frozenset(scope.in_edges) | frozenset(scope.out_edges)
    if model == ConsistencyModel.EDGE:
        return ExclusionSet(frozenset((v,)), edges)
    return ExclusionSet(frozenset((v,)) | frozenset(scope.neighbors), edges)


class RWLock:
    """Reader/writer lock with no fairness guarantee.

    The uncontended path only touches the raw mutex; the condition is
    signalled only when some thread is actually waiting.
    """

    __slots__ = ("_mutex", "_cond", "_readers", "_writer", "_waiting")

    def __init__(self):
        self._mutex = threading.Lock()
        self._cond = threading.Condition(self._mutex)
        self._readers = 0
        self._writer = False
        self._waiting = 0

    def acquire_read(self):
        with self._mutex:
            if self._writer:
                self._waiting += 1
                try:
                    while self._writer:
                        self._cond.wait()
                finally:
                    self._waiting -= 1
            self._readers += 1

    def release_read(self):
        with self._mutex:
            self._readers -= 1
            if self._readers == 0 and self._waiting:
                self._cond.notify_all()

    def acquire_write(self):
        with self._mutex:
            if self._writer or self._readers:
                self._waiting += 1
                try:
                    while self._writer or self._readers:
                        self._cond.wait()
                finally:
                    self._waiting -= 1
            self._writer = True

    def release_write(self):
        with self._mutex:
            self._writer = False
            if self._waiting:
                self._cond.notify_all()


def lock_plan(graph: DataGraph, v: int, model: ConsistencyModel) -> tuple[tuple[int, bool], ...]:
    """(vertex, write?) pairs in ascending vertex order."""
    if model == ConsistencyModel.VERTEX:
        return ((v, True),)
    write_nbrs = model == ConsistencyModel.FULL
    plan = [(u, write_nbrs) for u in graph.scope_of(v).neighbors]
    plan.append((v, True))
    plan.sort()
    return tuple(plan)


class InflightCounters:
    """Debug instrumentation: per-entity hold counters checked on every grant."""

    def __init__(self, graph: DataGraph):
        self._lock = threading.Lock()
        self.vertex_write = [0] * graph.num_vertices
        self.vertex_read = [0] * graph.num_vertices
        self.edge_write = [0] * graph.num_edges
        self.violations: list[tuple] = []
        self.grants = 0
        self._cache: dict = {}

    def _sets(self, graph, v, model):
        key = (v, int(model))
        hit = self._cache.get(key)
        if hit is None:
            ex = exclusion_set(graph, v, model)
            readers = graph.scope_of(v).neighbors if model == ConsistencyModel.EDGE else ()
            hit = self._cache[key] = (ex, readers)
        return hit

    def enter(self, graph: DataGraph, v: int, model: ConsistencyModel):
        ex, readers = self._sets(graph, v, model)
        with self._lock:
            self.grants += 1
            for u in ex.vertices:
                self.vertex_write[u] += 1
                if self.vertex_write[u] > 1 or self.vertex_read[u]:
                    self.violations.append(("vertex", u, v))
            for e in ex.edges:
                self.edge_write[e] += 1
                if self.edge_write[e] > 1:
                    self.violations.append(("edge", e, v))
            for u in readers:
                self.vertex_read[u] += 1
                if self.vertex_write[u]:
                    self.violations.append(("read", u, v))

    def leave(self, graph: DataGraph, v: int, model: ConsistencyModel):
        ex, readers = self._sets(graph, v, model)
        with self._lock:
            for u in ex.vertices:
                self.vertex_write[u] -= 1
            for e in ex.edges:
                self.edge_write[e] -= 1
            for u in readers:
                self.vertex_read[u] -= 1


class ScopeGuard:
    __slots__ = ("vertex", "model", "plan", "live", "_owner")

    def __init__(self, vertex, model, plan, owner):
        self.vertex = vertex
        self.model = model
        self.plan = plan
        self.live = True
        self._owner = owner


class LockTable:
    """One reader/writer lock per vertex plus the acquisition protocol."""

    def __init__(self, graph: DataGraph, instrument: bool | None = None):
        self.graph = graph
        self._locks = [RWLock() for _ in range(graph.num_vertices)]
        self._plans: dict[tuple[int, int], tuple] = {}
        self._held = threading.local()
        if instrument is None:
            instrument = os.environ.get(DEBUG_ENV, "") not in ("", "0")
        self.counters = InflightCounters(graph) if instrument else None

    def _plan(self, v, model):
        key = (v, int(model))
        plan = self._plans.get(key)
        if plan is None:
            plan = self._plans[key] = lock_plan(self.graph, v, model)
        return plan

    def acquire_scope(self, v: int, model: ConsistencyModel) -> ScopeGuard:
        if not (0 <= v < len(self._locks)):
            raise GraphError(f"unknown vertex {v!r}")
        if getattr(self._held, "guard", None) is not None:
            raise ContractViolation("worker already holds a scope")
        plan = self._plan(v, model)
        locks = self._locks
        for u, write in plan:
            if write:
                locks[u].acquire_write()
            else:
                locks[u].acquire_read()
        guard = ScopeGuard(v, model, plan, threading.get_ident())
        self._held.guard = guard
        if self.counters is not None:
            self.counters.enter(self.graph, v, model)
        return guard

    def release_scope(self, guard: ScopeGuard):
        if not guard.live:
            raise ContractViolation("scope released twice")
        if guard._owner != threading.get_ident():
            raise ContractViolation("scope guards cannot move between workers")
        if self.counters is not None:
            self.counters.leave(self.graph, guard.vertex, guard.model)
        guard.live = False
        self._held.guard = None
        locks = self._locks
        for u, write in reversed(guard.plan):
            if write:
                locks[u].release_write()
            else:
                locks[u].release_read()

    def holding(self) -> bool:
        return getattr(self._held, "guard", None) is not None
