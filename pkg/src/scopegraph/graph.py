"""Data graph and shared data table.

Vertices and edges carry opaque data blocks. Ids are dense integers and the
adjacency lists are kept sorted by neighbour id, which the lock protocol in
:mod:`scopegraph.consistency` relies on.
"""
from __future__ import annotations

import threading
from bisect import insort
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Optional

from .errors import FrozenGraphError, GraphError


@dataclass(frozen=True)
class ScopeDescriptor:
    center: int
    in_edges: tuple[int, ...]
    out_edges: tuple[int, ...]
    neighbors: tuple[int, ...]


class DataGraph:
    def __init__(self):
        self.vertex_data: list[Any] = []
        self.edge_data: list[Any] = []
        self.edge_source: list[int] = []
        self.edge_target: list[int] = []
        # per vertex: sorted list of (neighbour id, edge id)
        self._out: list[list[tuple[int, int]]] = []
        self._in: list[list[tuple[int, int]]] = []
        self._edge_index: dict[tuple[int, int], int] = {}
        self._frozen = 0
        self._scopes: Optional[list[ScopeDescriptor]] = None

    # -- construction -------------------------------------------------------

    def add_vertex(self, data: Any = None) -> int:
        self._check_mutable()
        self.vertex_data.append(data)
        self._out.append([])
        self._in.append([])
        self._scopes = None
        return len(self.vertex_data) - 1

    def add_edge(self, u: int, v: int, data: Any = None) -> int:
        self._check_mutable()
        self._check_vertex(u)
        self._check_vertex(v)
        if u == v:
            raise GraphError(f"self-loop on vertex {u}")
        if (u, v) in self._edge_index:
            raise GraphError(f"duplicate edge {u}->{v}")
        eid = len(self.edge_data)
        self.edge_data.append(data)
        self.edge_source.append(u)
        self.edge_target.append(v)
        self._edge_index[(u, v)] = eid
        insort(self._out[u], (v, eid))
        insort(self._in[v], (u, eid))
        self._scopes = None
        return eid

    def freeze(self):
        """Forbid structural changes. Nested freezes are counted."""
        if self._scopes is None:
            self._scopes = [self._build_scope(v) for v in range(self.num_vertices)]
        self._frozen += 1

    def unfreeze(self):
        if self._frozen == 0:
            raise GraphError("graph is not frozen")
        self._frozen -= 1

    @property
    def frozen(self) -> bool:
        return self._frozen > 0

    def _check_mutable(self):
        if self._frozen:
            raise FrozenGraphError("graph structure is frozen while an engine run is active")

    def _check_vertex(self, v: int):
        if not (isinstance(v, int) and 0 <= v < len(self.vertex_data)):
            raise GraphError(f"unknown vertex {v!r}")

    # -- queries ------------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_data)

    @property
    def num_edges(self) -> int:
        return len(self.edge_data)

    def out_edges(self, v: int) -> list[int]:
        self._check_vertex(v)
        return [e for _, e in self._out[v]]

    def in_edges(self, v: int) -> list[int]:
        self._check_vertex(v)
        return [e for _, e in self._in[v]]

    def out_neighbors(self, v: int) -> list[int]:
        self._check_vertex(v)
        return [u for u, _ in self._out[v]]

    def in_neighbors(self, v: int) -> list[int]:
        self._check_vertex(v)
        return [u for u, _ in self._in[v]]

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.scope_of(v).neighbors

    def find_edge(self, u: int, v: int) -> Optional[int]:
        return self._edge_index.get((u, v))

    def edge(self, u: int, v: int) -> int:
        try:
            return self._edge_index[(u, v)]
        except KeyError:
            raise GraphError(f"no edge {u}->{v}") from None

    def endpoints(self, e: int) -> tuple[int, int]:
        return self.edge_source[e], self.edge_target[e]

    def other(self, e: int, v: int) -> int:
        """The endpoint of edge ``e`` that is not ``v``."""
        s, t = self.edge_source[e], self.edge_target[e]
        if v == s:
            return t
        if v == t:
            return s
        raise GraphError(f"vertex {v} is not an endpoint of edge {e}")

    def scope_of(self, v: int) -> ScopeDescriptor:
        self._check_vertex(v)
        if self._scopes is not None:
            return self._scopes[v]
        return self._build_scope(v)

    def _build_scope(self, v: int) -> ScopeDescriptor:
        ins, outs = self._in[v], self._out[v]
        # both lists are sorted; merge them without duplicates
        nbrs = sorted({u for u, _ in ins} | {u for u, _ in outs})
        return ScopeDescriptor(
            center=v,
            in_edges=tuple(e for _, e in ins),
            out_edges=tuple(e for _, e in outs),
            neighbors=tuple(nbrs),
        )

    def degree(self, v: int) -> int:
        return len(self.scope_of(v).neighbors)


@dataclass
class SyncRegistration:
    """Fold / merge / apply triple attached to a shared-table key.

    ``fold(vertex_data, acc) -> acc`` runs once per vertex. ``merge`` combines
    partial accumulators and must be associative; without it the sync is a
    single sequential fold. ``period`` (seconds) enables background syncing.
    """

    key: Hashable
    fold: Callable[[Any, Any], Any]
    apply: Callable[[Any], Any] = lambda acc: acc
    initial: Any = 0
    merge: Optional[Callable[[Any, Any], Any]] = None
    period: Optional[float] = None


class SharedDataTable:
    """Associative map for global state.

    Values are replaced wholesale under a lock, so a reader always sees a
    value produced by one complete ``set``.
    """

    def __init__(self, entries: Optional[dict] = None):
        self._entries: dict = dict(entries or {})
        self._lock = threading.Lock()
        self.registrations: dict[Hashable, SyncRegistration] = {}

    def get(self, key):
        with self._lock:
            try:
                return self._entries[key]
            except KeyError:
                raise KeyError(f"missing shared-table key {key!r}") from None

    def set(self, key, value):
        with self._lock:
            self._entries[key] = value

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __getitem__(self, key):
        return self.get(key)

    def keys(self):
        with self._lock:
            return list(self._entries)

    def register_sync(self, reg: SyncRegistration):
        if reg.key in self.registrations:
            raise KeyError(f"sync already registered for key {reg.key!r}")
        self.registrations[reg.key] = reg
        self.set(reg.key, reg.apply(reg.initial))

    def view(self) -> "TableView":
        return TableView(self)


class TableView:
    """Read-only handle on a shared data table, given to update functions."""

    __slots__ = ("_table",)

    def __init__(self, table: SharedDataTable):
        self._table = table

    def get(self, key, default=...):
        if default is not ... and key not in self._table:
            return default
        return self._table.get(key)

    def __getitem__(self, key):
        return self._table.get(key)

    def __contains__(self, key):
        return key in self._table
