import itertools

import numpy as np
import pytest

from scopegraph import DataGraph


def random_graph(n, p, rng, vertex_data=lambda v: 0, edge_data=lambda e: 0, bidirected=False):
    """Erdos-Renyi style graph; each unordered pair gets one random-direction edge
    (or both directions with ``bidirected``)."""
    g = DataGraph()
    for v in range(n):
        g.add_vertex(vertex_data(v))
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p:
                if bidirected:
                    g.add_edge(u, v, edge_data(g.num_edges))
                    g.add_edge(v, u, edge_data(g.num_edges))
                elif rng.random() < 0.5:
                    g.add_edge(u, v, edge_data(g.num_edges))
                else:
                    g.add_edge(v, u, edge_data(g.num_edges))
    return g


def enumerate_marginals(potentials, edges, pairwise):
    """Exact single-node marginals of a small pairwise MRF by brute force.

    ``pairwise`` is one K x K matrix or a list (one per edge), indexed
    [x_u, x_v] for edge (u, v).
    """
    ks = [len(p) for p in potentials]
    n = len(ks)
    marg = [np.zeros(k) for k in ks]
    for x in itertools.product(*[range(k) for k in ks]):
        w = 1.0
        for v in range(n):
            w *= potentials[v][x[v]]
        for i, (u, v) in enumerate(edges):
            psi = pairwise if isinstance(pairwise, np.ndarray) else pairwise[i]
            w *= psi[x[u], x[v]]
        for v in range(n):
            marg[v][x[v]] += w
    return [m / m.sum() for m in marg]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
