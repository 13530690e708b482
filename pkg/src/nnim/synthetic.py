"""Synthetic labeled follow graphs for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .graph import LabeledGraph


def two_block_graph(n_nodes: int = 1200, d: int = 40, homophily: float = 0.9,
                    mean_follows: float = 8.0, own_rate: float = 0.35, other_rate: float = 0.03,
                    seed: int = 17) -> tuple[LabeledGraph, np.ndarray]:
    """Two-community homophilic follow graph with heavy-tailed popularity.

    Block ``b`` draws labels from its own profile: the first (resp. second)
    half of the labels fire with rates around ``own_rate`` and the rest
    around ``other_rate``.  Each node follows ``4 + Poisson(mean_follows - 4)``
    others, picked with probability proportional to a Pareto popularity
    times ``homophily`` (same block) or ``1 - homophily``.

    Returns the graph and the block assignment.
    """
    rng = np.random.default_rng(seed)
    blocks = rng.integers(0, 2, size=n_nodes)
    half = d // 2
    profiles = np.empty((2, d))
    for b in range(2):
        own = np.zeros(d, dtype=bool)
        own[:half] = b == 0
        own[half:] = b == 1
        profiles[b] = np.where(own, rng.uniform(0.5, 1.5, d) * own_rate, rng.uniform(0.5, 1.5, d) * other_rate)
    labels = (rng.random((n_nodes, d)) < profiles[blocks]).astype(np.uint8)

    popularity = rng.pareto(1.5, size=n_nodes) + 1.0
    follows = 4 + rng.poisson(max(mean_follows - 4, 0.0), size=n_nodes)
    edges = []
    for u in range(n_nodes):
        w = popularity * np.where(blocks == blocks[u], homophily, 1 - homophily)
        w[u] = 0.0
        m = min(int(follows[u]), n_nodes - 1)
        targets = rng.choice(n_nodes, size=m, replace=False, p=w / w.sum())
        edges.extend((u, int(v)) for v in targets)
    g = LabeledGraph.from_edges(n_nodes, np.array(edges), labels, directed=True)
    return g, blocks


def gaussian_points(n: int, d: int, seed: int = 17) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(n, d))
