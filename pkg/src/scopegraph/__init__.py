"""Graph-parallel execution engine with scoped update functions.

The public surface: build a :class:`DataGraph`, register update functions and
syncs, pick a consistency model and a scheduler, and call :meth:`Engine.run`.
"""
from .consistency import ConsistencyModel, ExclusionSet, LockTable, exclusion_set
from .engine import (Engine, EngineConfig, RunStats, ScopeView, TaskSink, TerminationReason,
                     register_sync, run, sync_now)
from .errors import (ContractViolation, DegeneratePotentialError, DivergenceError, FrozenGraphError,
                     GraphError, UnsupportedOperation, UpdateFunctionError)
from .graph import DataGraph, ScopeDescriptor, SharedDataTable, SyncRegistration
from .scheduling import (BLOCKED, EXHAUSTED, ExecutionPlan, SchedulerKind, Task, compile_set_schedule,
                         make_scheduler, plan_complete, plan_next_ready)

__version__ = "0.1.0"
