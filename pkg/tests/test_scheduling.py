import threading
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scopegraph import (BLOCKED, EXHAUSTED, ConsistencyModel, ContractViolation, DataGraph, SchedulerKind, Task,
                        compile_set_schedule, exclusion_set, make_scheduler, plan_complete, plan_next_ready)
from scopegraph.errors import GraphError, UnsupportedOperation
from scopegraph.scheduling import (ApproxPriorityScheduler, FifoScheduler, MultiQueueFifoScheduler,
                                   PartitionedFifoScheduler, PriorityScheduler, SynchronousScheduler)

from conftest import random_graph


def empty_graph(n):
    g = DataGraph()
    for _ in range(n):
        g.add_vertex()
    return g


def drain(s, worker=0):
    out = []
    while (t := s.next_task(worker)) is not None:
        out.append(t)
    return out


def test_fifo_order():
    s = FifoScheduler()
    for v in (3, 1, 2):
        s.add_task(Task(v))
    assert [t.vertex for t in drain(s)] == [3, 1, 2]
    assert s.next_task() is None


def test_round_robin_sweeps():
    s = make_scheduler("round-robin", empty_graph(3), sweeps=2)
    assert [t.vertex for t in drain(s)] == [0, 1, 2, 0, 1, 2]
    with pytest.raises(UnsupportedOperation):
        s.add_task(Task(0))


def test_priority_order_and_max_merge():
    s = PriorityScheduler()
    s.add_task_with_priority(Task(0), 1.0)
    s.add_task_with_priority(Task(1), 5.0)
    s.add_task_with_priority(Task(2), 3.0)
    s.add_task_with_priority(Task(0), 7.0)
    s.add_task_with_priority(Task(1), 2.0)  # lower than pending 5.0: ignored
    assert s.pending() == 3
    got = drain(s)
    assert [(t.vertex, t.priority) for t in got] == [(0, 7.0), (1, 5.0), (2, 3.0)]


def test_priority_ties_pop_in_insertion_order():
    s = PriorityScheduler()
    for v in (4, 2, 9):
        s.add_task_with_priority(Task(v), 1.0)
    assert [t.vertex for t in drain(s)] == [4, 2, 9]


def test_different_function_ids_are_separate_tasks():
    s = PriorityScheduler()
    s.add_task_with_priority(Task(0, 0), 1.0)
    s.add_task_with_priority(Task(0, 1), 1.0)
    assert sorted(t.function_id for t in drain(s)) == [0, 1]


def test_multiqueue_stealing():
    s = MultiQueueFifoScheduler(2)
    s.add_task(Task(0), worker=0)
    s.add_task(Task(1), worker=0)
    # worker 1 has an empty queue and steals from worker 0
    assert s.next_task(1).vertex == 0
    assert s.next_task(0).vertex == 1
    assert s.next_task(1) is None


def test_partitioned_does_not_steal():
    s = PartitionedFifoScheduler(2)
    s.add_task(Task(0))
    s.add_task(Task(2))
    assert s.next_task(1) is None
    assert [t.vertex for t in drain(s, 0)] == [0, 2]


def test_approx_priority_prefers_own_heap_then_best_top():
    s = ApproxPriorityScheduler(2)
    s.add_task_with_priority(Task(0), 1.0, worker=0)
    s.add_task_with_priority(Task(1), 9.0, worker=1)
    s.add_task_with_priority(Task(2), 5.0, worker=1)
    assert s.next_task(0).vertex == 0
    assert s.next_task(0).vertex == 1  # stolen: largest top
    s.add_task_with_priority(Task(2), 6.0)  # merge keeps the original heap
    assert s.next_task(1).priority == 6.0
    assert s.pending() == 0


def test_synchronous_barrier():
    s = SynchronousScheduler(2, sweeps=2)
    a, b = s.next_task(), s.next_task()
    assert s.next_task() is None  # generation 1 not released yet
    s.task_done(a)
    assert s.next_task() is None
    s.task_done(b)
    assert s.generation == 1
    assert [t.vertex for t in drain(s)] == [0, 1]


def test_unknown_kind():
    with pytest.raises(ValueError):
        make_scheduler("lifo", empty_graph(1))
    with pytest.raises(ValueError):
        make_scheduler(SchedulerKind.SET, empty_graph(1))


_DYNAMIC = ["fifo", "multiqueue", "partitioned", "priority", "approx-priority"]


@given(st.sampled_from(_DYNAMIC), st.lists(st.tuples(st.integers(0, 9), st.integers(0, 1),
                                                    st.floats(0, 10)), max_size=60),
       st.integers(1, 4))
@settings(max_examples=80, deadline=None)
def test_no_task_lost_or_invented(kind, adds, workers):
    s = make_scheduler(kind, empty_graph(10), workers=workers)
    for i, (v, fid, p) in enumerate(adds):
        s.add_task_with_priority(Task(v, fid), p, worker=i % workers)
    got = []
    while True:
        batch = [t for w in range(workers) if (t := s.next_task(w)) is not None]
        if not batch:
            break
        got += batch
    assert s.pending() == 0
    if SchedulerKind(kind).prioritized:
        # one entry per (vertex, function), carrying the max priority offered
        best = {}
        for v, fid, p in adds:
            best[(v, fid)] = max(best.get((v, fid), -1.0), p)
        assert {(t.vertex, t.function_id): t.priority for t in got} == best
        assert len(got) == len(best)
    else:
        assert Counter((t.vertex, t.function_id) for t in got) == Counter((v, f) for v, f, _ in adds)


def test_concurrent_adds_and_takes_conserve_tasks():
    s = MultiQueueFifoScheduler(4)
    taken = []
    lock = threading.Lock()

    def producer(w):
        for i in range(500):
            s.add_task(Task(w * 1000 + i), worker=w)

    def consumer(w):
        mine = []
        for _ in range(5000):
            t = s.next_task(w)
            if t is not None:
                mine.append(t.vertex)
        with lock:
            taken.extend(mine)

    ths = [threading.Thread(target=producer, args=(w,)) for w in range(4)]
    ths += [threading.Thread(target=consumer, args=(w,)) for w in range(4)]
    for t in ths:
        t.start()
    for t in ths:
        t.join()
    taken += [t.vertex for t in drain(s)]
    assert sorted(taken) == sorted(w * 1000 + i for w in range(4) for i in range(500))


# --- set scheduler -----------------------------------------------------------

def fig3_graph():
    g = empty_graph(5)
    for u, v in ((0, 2), (1, 2), (2, 4), (3, 4)):
        g.add_edge(u, v)
    return g


def test_fig3_v4_ready_while_v3_blocked():
    g = fig3_graph()
    plan = compile_set_schedule(g, [([0, 1, 4], 0), ([2, 3], 0)], ConsistencyModel.EDGE)
    issued = {}
    for _ in range(3):
        t = plan_next_ready(plan)
        issued[t.vertex] = t
    assert set(issued) == {0, 1, 4}
    assert plan_next_ready(plan) is BLOCKED
    plan_complete(plan, issued[4].node)
    t = plan_next_ready(plan)
    assert t.vertex == 3  # only waits for v5
    assert plan_next_ready(plan) is BLOCKED  # v3 still waits for v1 and v2
    plan_complete(plan, issued[0].node)
    plan_complete(plan, issued[1].node)
    plan_complete(plan, t.node)
    last = plan_next_ready(plan)
    assert last.vertex == 2
    plan_complete(plan, last.node)
    assert plan_next_ready(plan) is EXHAUSTED


def test_empty_plan_is_exhausted():
    plan = compile_set_schedule(empty_graph(3), [], ConsistencyModel.EDGE)
    assert plan_next_ready(plan) is EXHAUSTED


def test_completing_unissued_node_is_contract_violation():
    plan = compile_set_schedule(empty_graph(2), [([0, 1], 0)], ConsistencyModel.EDGE)
    with pytest.raises(ContractViolation):
        plan_complete(plan, 0)
    t = plan_next_ready(plan)
    plan_complete(plan, t.node)
    with pytest.raises(ContractViolation):
        plan_complete(plan, t.node)
    with pytest.raises(ContractViolation):
        plan_complete(plan, 7)


def test_unknown_vertex_in_schedule():
    with pytest.raises(GraphError):
        compile_set_schedule(empty_graph(2), [([0, 2], 0)], ConsistencyModel.EDGE)


def test_repeated_vertex_in_consecutive_sets_chains():
    plan = compile_set_schedule(empty_graph(1), [([0], 0), ([0], 1), ([0], 0)], ConsistencyModel.VERTEX)
    assert plan.deps == [[], [0], [1]]
    assert [t.function_id for t in plan.nodes] == [0, 1, 0]


def _closure(deps):
    anc = []
    for ds in deps:
        a = set(ds)
        for d in ds:
            a |= anc[d]
        anc.append(a)
    return anc


@given(st.integers(1, 6), st.floats(0, 1), st.integers(0, 10**6),
       st.sampled_from(list(ConsistencyModel)), st.booleans())
@settings(max_examples=120, deadline=None)
def test_plan_order_is_exactly_conflict_order_and_minimal(n, p, seed, model, reduce):
    rng = np.random.default_rng(seed)
    g = random_graph(n, p, rng)
    seq = [(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist(), int(rng.integers(0, 2)))
           for _ in range(int(rng.integers(1, 5)))]
    plan = compile_set_schedule(g, seq, model, reduce=reduce)
    flat = [v for vs, _ in seq for v in sorted(set(vs))]
    assert [t.vertex for t in plan.nodes] == flat
    ex = [exclusion_set(g, v, model) for v in flat]
    anc = _closure(plan.deps)
    for j in range(len(flat)):
        for i in range(j):
            # ordered iff connected by a chain of conflicts; every direct
            # conflict is ordered
            if ex[i].intersects(ex[j]):
                assert i in anc[j]
    # no ordering without a conflict chain
    conflict_anc = _closure([[i for i in range(j) if ex[i].intersects(ex[j])] for j in range(len(flat))])
    assert anc == conflict_anc
    if reduce:
        for j, ds in enumerate(plan.deps):
            for d in ds:
                others = set().union(*(anc[x] for x in ds if x != d))
                assert d not in others, "edge implied by another dependency"


def test_single_worker_issue_order_is_deterministic():
    rng = np.random.default_rng(4)
    g = random_graph(20, 0.2, rng)
    seq = [(list(range(0, 20, 2)), 0), (list(range(1, 20, 2)), 0), (list(range(20)), 1)]

    def order():
        plan = compile_set_schedule(g, seq, ConsistencyModel.EDGE)
        out = []
        while isinstance(t := plan_next_ready(plan), Task):
            out.append(t.node)
            plan_complete(plan, t.node)
        return out

    first = order()
    assert first == order() and sorted(first) == list(range(len(first)))
