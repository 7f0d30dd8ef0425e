"""Pairwise MRF graph builders shared by BP and Gibbs sampling."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def label_distance(k: int) -> np.ndarray:
    idx = np.arange(k)
    d = np.abs(idx[:, None] - idx[None, :]).astype(float)
    d.setflags(write=False)
    return d


def laplace_potential(k: int, lam: float) -> np.ndarray:
    """psi(a, b) = exp(-lam * |a - b|) over label indices."""
    return np.exp(-lam * label_distance(k))


def grid_edges(height: int, width: int):
    """Undirected 4-neighbour grid edges as (u, v, axis) with u < v.

    Vertex id is ``row * width + col``; axis 0 joins columns, axis 1 rows.
    """
    out = []
    for r in range(height):
        for c in range(width):
            v = r * width + c
            if c + 1 < width:
                out.append((v, v + 1, 0))
            if r + 1 < height:
                out.append((v, v + width, 1))
    return out


def random_tree_edges(n: int, rng: np.random.Generator):
    """Random labelled tree (each vertex attaches to an earlier one)."""
    return [(int(rng.integers(0, v)), v) for v in range(1, n)]


def gaussian_node_potential(observation: float, k: int, sigma: float, sigma_floor: float = 0.1) -> np.ndarray:
    s = max(sigma, sigma_floor)
    labels = np.arange(k)
    logp = -((observation - labels) ** 2) / (2 * s * s)
    p = np.exp(logp - logp.max())
    return np.maximum(p, 1e-300)
