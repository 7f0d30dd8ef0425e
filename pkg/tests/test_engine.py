import time

import numpy as np
import pytest

from scopegraph import (ConsistencyModel, ContractViolation, DataGraph, Engine, EngineConfig, SharedDataTable,
                        SyncRegistration, Task, TerminationReason, compile_set_schedule, run, sync_now)
from scopegraph.errors import FrozenGraphError, UpdateFunctionError

from conftest import random_graph


def chain(n, data=0):
    g = DataGraph()
    for _ in range(n):
        g.add_vertex(data)
    for v in range(n - 1):
        g.add_edge(v, v + 1, 0)
    return g


def incr(scope, table, sink):
    scope.data = scope.data + 1


def test_empty_task_set_returns_immediately():
    g = chain(3)
    st = Engine(g, [incr]).run()
    assert st.updates_applied == 0
    assert st.termination_reason is TerminationReason.SCHEDULER_EXHAUSTED
    assert g.vertex_data == [0, 0, 0]


def test_round_robin_two_sweeps():
    g = chain(3)
    st = run(g, EngineConfig(scheduler="round-robin", sweeps=2), [incr])
    assert st.updates_applied == 6 and g.vertex_data == [2, 2, 2]
    assert st.termination_reason is TerminationReason.SWEEP_LIMIT


def test_fifo_dynamic_tasks_follow_emission():
    order = []

    def f(scope, table, sink):
        order.append(scope.vertex)
        if scope.vertex + 1 < scope.graph.num_vertices:
            sink.add(scope.vertex + 1)

    run(chain(4), EngineConfig(scheduler="fifo"), [f], tasks=[0])
    assert order == [0, 1, 2, 3]


def test_emitted_tasks_can_target_other_functions():
    seen = []

    def f0(scope, table, sink):
        seen.append(("f0", scope.vertex))
        sink.add(scope.vertex, function_id=1)

    def f1(scope, table, sink):
        seen.append(("f1", scope.vertex))

    run(chain(2), EngineConfig(), {0: f0, 1: f1}, tasks=[Task(1)])
    assert seen == [("f0", 1), ("f1", 1)]


def test_graph_frozen_during_run_and_unfrozen_after():
    errs = []

    def f(scope, table, sink):
        try:
            scope.graph.add_vertex()
        except FrozenGraphError as exc:
            errs.append(exc)

    g = chain(2)
    run(g, EngineConfig(), [f], tasks=[0])
    assert len(errs) == 1 and not g.frozen
    g.add_vertex()


def test_scope_view_rejects_out_of_scope_access():
    g = chain(4)

    def f(scope, table, sink):
        scope.vertex_data(3)

    with pytest.raises(UpdateFunctionError) as info:
        run(g, EngineConfig(), [f], tasks=[0])
    assert isinstance(info.value.cause, ContractViolation)
    assert info.value.vertex == 0 and info.value.function_id == 0


def test_update_error_stops_run_and_reports_task():
    calls = []

    def f(scope, table, sink):
        calls.append(scope.vertex)
        if scope.vertex == 2:
            raise ZeroDivisionError("boom")
        sink.add(scope.vertex + 1)

    with pytest.raises(UpdateFunctionError) as info:
        run(chain(5), EngineConfig(workers=2), [f], tasks=[0])
    assert info.value.vertex == 2 and isinstance(info.value.cause, ZeroDivisionError)
    assert 3 not in calls


def test_missing_function_id():
    with pytest.raises(KeyError):
        run(chain(2), EngineConfig(scheduler="round-robin", function_id=3), [incr])


def test_termination_function_stops_run():
    g = chain(1)

    def f(scope, table, sink):
        scope.data += 1
        sink.add(0)

    t = SharedDataTable()
    t.register_sync(SyncRegistration("x", fold=lambda d, a: a + d, initial=0))

    def bump(scope, table, sink):
        f(scope, table, sink)
        sink.request_sync("x")

    st = Engine(g, [bump], t, EngineConfig(termination=[lambda tv: tv["x"] >= 10])).run([0])
    assert st.termination_reason is TerminationReason.TERMINATION_FUNCTION
    assert g.vertex_data[0] == 10 and st.sync_counts["x"] == 10


def test_termination_true_before_start_runs_nothing():
    g = chain(2)
    st = run(g, EngineConfig(termination=[lambda tv: True]), [incr], tasks=[0, 1])
    assert st.updates_applied == 0 and g.vertex_data == [0, 0]


def test_sync_examples():
    g = DataGraph()
    for x in (3, -1, 4, 1, 5):
        g.add_vertex(x)
    t = SharedDataTable()
    t.register_sync(SyncRegistration("sum", fold=lambda d, a: a + d, initial=0, merge=lambda a, b: a + b))
    t.register_sync(SyncRegistration("mean", fold=lambda d, a: (a[0] + d, a[1] + 1), initial=(0, 0),
                                     merge=lambda a, b: (a[0] + b[0], a[1] + b[1]),
                                     apply=lambda a: a[0] / a[1] if a[1] else 0.0))
    # sequential-only fold that records visiting order
    t.register_sync(SyncRegistration("order", fold=lambda d, a: a + [d], initial=[]))
    assert sync_now(g, t, "sum") == 12
    assert sync_now(g, t, "sum", workers=3) == 12 and t["sum"] == 12
    assert sync_now(g, t, "mean", workers=4) == pytest.approx(2.4)
    assert sync_now(g, t, "order", workers=4) == [3, -1, 4, 1, 5]
    # the initial accumulator is not shared between folds
    assert sync_now(g, t, "order") == [3, -1, 4, 1, 5]
    with pytest.raises(KeyError):
        sync_now(g, t, "nope")


def test_sync_on_empty_graph_applies_initial():
    t = SharedDataTable()
    t.register_sync(SyncRegistration("s", fold=lambda d, a: a + d, apply=lambda a: a - 1, initial=0))
    assert sync_now(DataGraph(), t, "s") == -1


def test_single_worker_runs_are_deterministic():
    def mk():
        rng = np.random.default_rng(0)
        return random_graph(40, 0.1, rng, vertex_data=lambda v: (float(v), 0), edge_data=lambda e: 0.0)

    def f(scope, table, sink):
        s, visits = scope.data
        for e in scope.in_edges + scope.out_edges:
            u = scope.other(e)
            s += 0.5 * scope.vertex_data(u)[0]
            scope.set_edge_data(e, scope.edge_data(e) + 1)
        scope.data = (s % 7.0, visits + 1)
        if visits < 5 and s % 3 < 1.5:
            for u in scope.neighbors:
                sink.add(u, priority=s % 5)

    outs = []
    for kind in ("fifo", "priority", "multiqueue"):
        for _ in range(2):
            g = mk()
            st = run(g, EngineConfig(scheduler=kind), [f], tasks=range(40))
            outs.append((kind, st.updates_applied, list(g.vertex_data), list(g.edge_data)))
    for i in range(0, 6, 2):
        assert outs[i] == outs[i + 1]


@pytest.mark.parametrize("model", ["vertex", "edge", "full"])
def test_no_inflight_overlap_instrumented(model):
    g = random_graph(60, 0.08, np.random.default_rng(1), vertex_data=lambda v: 0, edge_data=lambda e: 0)

    def f(scope, table, sink):
        scope.data += 1
        if scope.data < 20:
            sink.add(scope.vertex)

    eng = Engine(g, [f], config=EngineConfig(workers=6, model=model, scheduler="multiqueue", instrument=True))
    st = eng.run(range(60))
    assert eng.locks.counters.violations == []
    assert st.updates_applied == 60 * 20 and g.vertex_data == [20] * 60
    assert sum(st.per_worker_updates) == st.updates_applied


def test_emitted_tasks_scheduled_after_release():
    # under the vertex model a self-reschedule must not be handed out while the
    # emitting update still holds its scope
    g = chain(1)
    active = []
    overlap = []

    def f(scope, table, sink):
        active.append(1)
        if len(active) > 1:
            overlap.append(True)
        time.sleep(0.001)
        scope.data += 1
        if scope.data < 30:
            sink.add(0)
        active.pop()

    run(g, EngineConfig(workers=4, model="vertex"), [f], tasks=[0])
    assert not overlap and g.vertex_data == [30]


def test_set_schedule_runs_every_node_once():
    g = chain(6)
    plan = compile_set_schedule(g, [([0, 2, 4], 0), ([1, 3, 5], 0), (range(6), 0)], ConsistencyModel.EDGE)
    st = Engine(g, [incr], config=EngineConfig(workers=3)).run(plan=plan)
    assert st.updates_applied == 12 and g.vertex_data == [2] * 6
    # a plan can be replayed
    Engine(g, [incr], config=EngineConfig(workers=3)).run(plan=plan)
    assert g.vertex_data == [4] * 6


def test_synchronous_scheduler_is_jacobi_like():
    g = chain(3, data=1.0)
    gen = []

    def f(scope, table, sink):
        gen.append(scope.vertex)
        scope.data = scope.data * 2

    st = run(g, EngineConfig(scheduler="sync", sweeps=3, workers=2), [f])
    assert st.updates_applied == 9 and g.vertex_data == [8.0] * 3
    # each generation is complete before the next starts
    assert all(sorted(gen[i:i + 3]) == [0, 1, 2] for i in (0, 3, 6))


def test_run_is_not_reentrant():
    g = chain(2)
    errs = []

    def f(scope, table, sink):
        try:
            eng.run([0])
        except ContractViolation as exc:
            errs.append(exc)

    eng = Engine(g, [f])
    eng.run([0])
    assert errs


def test_stats_csv():
    st = run(chain(2), EngineConfig(scheduler="round-robin"), [incr])
    text = st.to_csv()
    assert text.splitlines()[0] == "workers,scheduler,model,updates,wall_time_s,reason"
    assert text.splitlines()[1].startswith("1,round-robin,edge,2,")


def test_background_sync_sees_progress():
    g = chain(50, data=0)
    t = SharedDataTable()
    t.register_sync(SyncRegistration("total", fold=lambda d, a: a + d, initial=0, period=0.01))

    def f(scope, table, sink):
        scope.data += 1
        time.sleep(0.0002)

    cfg = EngineConfig(workers=2, scheduler="round-robin", sweeps=10**6,
                       termination=[lambda tv: tv["total"] >= 500])
    st = Engine(g, [f], t, cfg).run()
    assert st.termination_reason is TerminationReason.TERMINATION_FUNCTION
    assert t["total"] >= 500 and st.sync_counts["total"] >= 1
