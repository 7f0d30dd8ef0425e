import itertools
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scopegraph import ConsistencyModel, ContractViolation, DataGraph, GraphError, LockTable, exclusion_set
from scopegraph.consistency import RWLock, lock_plan

from conftest import random_graph

V, E, F = ConsistencyModel.VERTEX, ConsistencyModel.EDGE, ConsistencyModel.FULL


def path3():
    g = DataGraph()
    for _ in range(3):
        g.add_vertex()
    g.add_edge(0, 1)
    g.add_edge(1, 2)
    return g


def test_parse_model_names():
    assert ConsistencyModel.parse("Full") is F
    assert ConsistencyModel.parse(" edge ") is E
    with pytest.raises(ValueError):
        ConsistencyModel.parse("strict")


def test_exclusion_sets_on_a_path():
    g = path3()
    assert exclusion_set(g, 1, V).vertices == {1} and not exclusion_set(g, 1, V).edges
    assert exclusion_set(g, 1, E).vertices == {1} and exclusion_set(g, 1, E).edges == {0, 1}
    assert exclusion_set(g, 1, F).vertices == {0, 1, 2}
    # endpoints of the path under the edge model share edge 0 with the middle
    assert exclusion_set(g, 0, E).intersects(exclusion_set(g, 1, E))
    assert not exclusion_set(g, 0, E).intersects(exclusion_set(g, 2, E))
    assert exclusion_set(g, 0, F).intersects(exclusion_set(g, 2, F))


@given(st.integers(2, 25), st.floats(0.0, 0.6), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_model_strength_ordering(n, p, seed):
    g = random_graph(n, p, np.random.default_rng(seed))
    for v in range(n):
        sets = [exclusion_set(g, v, m) for m in (V, E, F)]
        assert sets[0] <= sets[1] <= sets[2]
        # weaker model conflicts are a subset of stronger model conflicts
        for u in range(n):
            if u == v:
                continue
            hits = [exclusion_set(g, u, m).intersects(sets[i]) for i, m in enumerate((V, E, F))]
            assert hits[0] <= hits[1] <= hits[2]


def test_lock_plans_sorted_with_expected_modes():
    g = path3()
    assert lock_plan(g, 1, V) == ((1, True),)
    assert lock_plan(g, 1, E) == ((0, False), (1, True), (2, False))
    assert lock_plan(g, 1, F) == ((0, True), (1, True), (2, True))
    assert lock_plan(g, 2, E) == ((1, False), (2, True))


# --- RWLock ------------------------------------------------------------------

def test_rwlock_readers_share_writer_excludes():
    lock = RWLock()
    lock.acquire_read()
    lock.acquire_read()
    got = threading.Event()

    def writer():
        lock.acquire_write()
        got.set()
        lock.release_write()

    t = threading.Thread(target=writer)
    t.start()
    time.sleep(0.05)
    assert not got.is_set()
    lock.release_read()
    time.sleep(0.02)
    assert not got.is_set()
    lock.release_read()
    t.join(2)
    assert got.is_set()


# --- LockTable ---------------------------------------------------------------

def _concurrent(table, a, b, model):
    """True iff scopes a and b can be held at the same time by two threads."""
    ga = table.acquire_scope(a, model)
    ok = threading.Event()

    def other():
        gb = table.acquire_scope(b, model)
        ok.set()
        table.release_scope(gb)

    t = threading.Thread(target=other)
    t.start()
    t.join(0.15)
    concurrent = ok.is_set()
    table.release_scope(ga)
    t.join(2)
    assert ok.is_set()
    return concurrent


@pytest.mark.parametrize("model,a,b,expected", [
    (V, 0, 1, True),
    (E, 0, 2, True),
    (E, 0, 1, False),
    (F, 0, 2, False),
    (V, 1, 1, False),
])
def test_grant_concurrency_examples(model, a, b, expected):
    table = LockTable(path3())
    assert _concurrent(table, a, b, model) is expected


def test_edge_model_neighbour_reads_do_not_conflict():
    # 0 and 2 both read-lock vertex 1 under the edge model
    g = path3()
    table = LockTable(g)
    assert _concurrent(table, 0, 2, E)


def test_double_release_and_reentry_are_contract_violations():
    table = LockTable(path3())
    guard = table.acquire_scope(0, E)
    with pytest.raises(ContractViolation):
        table.acquire_scope(2, E)
    table.release_scope(guard)
    with pytest.raises(ContractViolation):
        table.release_scope(guard)
    assert not table.holding()


def test_release_from_another_thread_rejected():
    table = LockTable(path3())
    guard = table.acquire_scope(0, V)
    errs = []

    def other():
        try:
            table.release_scope(guard)
        except ContractViolation as exc:
            errs.append(exc)

    t = threading.Thread(target=other)
    t.start()
    t.join()
    assert errs
    table.release_scope(guard)


def test_unknown_vertex():
    with pytest.raises(GraphError):
        LockTable(path3()).acquire_scope(3, V)


@pytest.mark.parametrize("model", [E, F])
def test_no_deadlock_under_contention(model):
    g = random_graph(30, 0.3, np.random.default_rng(3))
    table = LockTable(g, instrument=True)
    done = []

    def worker(seed):
        r = np.random.default_rng(seed)
        for v in r.integers(0, 30, 800):
            guard = table.acquire_scope(int(v), model)
            table.release_scope(guard)
        done.append(seed)

    threads = [threading.Thread(target=worker, args=(s,), daemon=True) for s in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(30)
    assert len(done) == 8, "workers deadlocked"
    assert table.counters.violations == []
    assert table.counters.grants == 8 * 800


def test_sequential_consistency_replay():
    """Concurrent execution of read-modify-write updates under the edge
    model must equal some sequential order of the same updates.

    Each update appends its own id to its vertex's log and records a snapshot
    of its neighbours' logs. Replaying the updates in the recorded commit
    order reproduces every snapshot exactly.
    """
    g = random_graph(7, 0.5, np.random.default_rng(11))
    table = LockTable(g)
    logs = [[] for _ in range(g.num_vertices)]
    commits = []
    commit_lock = threading.Lock()

    def update(v, uid):
        guard = table.acquire_scope(v, E)
        snap = {u: tuple(logs[u]) for u in g.scope_of(v).neighbors}
        logs[v].append(uid)
        with commit_lock:
            commits.append((uid, v, snap))
        table.release_scope(guard)

    tasks = [(int(v), i) for i, v in enumerate(np.random.default_rng(2).integers(0, 7, 400))]
    chunks = [tasks[i::4] for i in range(4)]
    threads = [threading.Thread(target=lambda c=c: [update(v, i) for v, i in c]) for c in chunks]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    replay = [[] for _ in range(g.num_vertices)]
    for uid, v, snap in commits:
        assert snap == {u: tuple(replay[u]) for u in snap}
        replay[v].append(uid)
    assert replay == logs


def test_all_pairs_small_graph_agree_with_exclusion_sets():
    g = random_graph(5, 0.5, np.random.default_rng(5))
    table = LockTable(g)
    for model in (V, E, F):
        for a, b in itertools.combinations(range(5), 2):
            expect = not exclusion_set(g, a, model).intersects(exclusion_set(g, b, model))
            if model == E:
                # read locks on shared neighbours do not block, and edge sets
                # only overlap when a and b are adjacent
                expect = b not in g.scope_of(a).neighbors
            assert _concurrent(table, a, b, model) is expect, (model, a, b)
