"""Comparison predictors producing ``|U| x d`` score matrices.

Whole-network baselines (dynamic collaborative filtering, label
propagation) treat the graph as undirected: labels flow along edges in
either direction.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .core import CorePartition
from .dynamics import Trajectory
from .graph import LabeledGraph
from .inference import initialize_beliefs
from .knn import rank_distances

logger = logging.getLogger(__name__)


def cf_bipartite(part: CorePartition, g: LabeledGraph) -> np.ndarray:
    """Mean label vector of the followed core members (static, no PCA)."""
    return initialize_beliefs(part, g).phi


def cf_dynamic(g: LabeledGraph, part: CorePartition, max_steps: int = 100, D: float = 1e-3,
               return_trajectory: bool = False):
    """Synchronous mean-propagation from the core over the whole graph.

    Core rows are fixed to their labels.  A non-core node becomes labeled
    once it has a labeled neighbour and from then on holds the mean of its
    labeled neighbours.  Nodes never reached score 0.5.
    """
    n = g.n_nodes
    adj = g.undirected().astype(np.float64)
    core_mask = np.zeros(n, dtype=bool)
    core_mask[part.core] = True
    state = np.full((n, g.d), 0.5)
    state[core_mask] = g.labels[core_mask]
    labeled = core_mask.copy()
    traj = Trajectory()
    for _ in range(max_steps):
        lab = labeled.astype(np.float64)
        counts = adj @ lab
        sums = adj @ (state * lab[:, None])
        reach = (counts > 0) & ~core_mask
        new = state.copy()
        new[reach] = sums[reach] / counts[reach, None]
        new_labeled = labeled | reach
        disp = np.abs(new - state).sum()
        grew = bool((new_labeled & ~labeled).any())
        traj.record(disp, new[part.periphery].mean(axis=0).sum() if part.n else 0.0)
        state, labeled = new, new_labeled
        if disp <= D and not grew:
            traj.converged = True
            break
    scores = state[part.periphery]
    if return_trajectory:
        return scores, traj
    return scores


def label_propagation(g: LabeledGraph, part: CorePartition, seed: int = 17, max_rounds: int = 100,
                      return_info: bool = False):
    """Core-seeded asynchronous majority propagation, independently per label.

    In each round the non-core nodes are visited in a seeded random order;
    a visited node with at least one labeled neighbour takes, per
    coordinate, the majority bit among its labeled neighbours.  Ties keep
    the node's current bit, or are settled by a seeded coin if the node
    has none yet.  Stops after a round without changes.
    """
    n = g.n_nodes
    adj = g.undirected()
    core_mask = np.zeros(n, dtype=bool)
    core_mask[part.core] = True
    bits = np.zeros((n, g.d), dtype=np.int8)
    bits[core_mask] = g.labels[core_mask]
    labeled = core_mask.copy()
    free = np.flatnonzero(~core_mask)
    rng = np.random.default_rng(seed)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        changed = False
        for v in rng.permutation(free):
            nb = adj.indices[adj.indptr[v]:adj.indptr[v + 1]]
            nb = nb[labeled[nb]]
            if len(nb) == 0:
                continue
            ones = bits[nb].sum(axis=0, dtype=np.int64)
            zeros = len(nb) - ones
            new = (ones > zeros).astype(np.int8)
            tie = ones == zeros
            if tie.any():
                if labeled[v]:
                    new[tie] = bits[v, tie]
                else:
                    new[tie] = rng.random(int(tie.sum())) < 0.5
            if not labeled[v] or not np.array_equal(new, bits[v]):
                changed = True
            bits[v] = new
            labeled[v] = True
        if not changed:
            break
    isolated = int((~labeled[part.periphery]).sum())
    if isolated:
        logger.info("label_propagation: %d peripheral nodes never labeled", isolated)
    scores = bits[part.periphery].astype(np.float64)
    if return_info:
        return scores, {"rounds": rounds, "unreached": isolated}
    return scores


def random_hk(part: CorePartition, g: LabeledGraph, k: int, epsilon_radius: float | None = None,
              D: float = 1e-3, max_steps: int = 100, seed: int = 17, return_trajectory: bool = False):
    """Random Hegselmann-Krause: average ``k`` users drawn from the radius ball.

    Starts from :func:`cf_bipartite`.  The ball around ``u`` holds every user
    within Euclidean distance ``epsilon_radius`` (default ``sqrt(d / 2)``),
    ``u`` included; when it has at most ``k`` members all of them are used.
    """
    phi = cf_bipartite(part, g)
    return random_hk_from(phi, k, epsilon_radius, D, max_steps, seed, return_trajectory)


def random_hk_from(phi, k: int, epsilon_radius: float | None = None, D: float = 1e-3,
                   max_steps: int = 100, seed: int = 17, return_trajectory: bool = False):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[:, None]
    n, d = phi.shape
    radius = math.sqrt(d / 2) if epsilon_radius is None else float(epsilon_radius)
    r2 = radius * radius
    traj = Trajectory()
    block = max(1, min(n, (32 * 2**20) // max(1, n * d * 8)))
    for t in range(max_steps):
        rng = np.random.default_rng([seed, t])
        new = np.empty_like(phi)
        for start in range(0, n, block):
            rows = np.arange(start, min(n, start + block))
            inside = rank_distances(phi[rows], phi, "euclidean") <= r2
            for i, u in enumerate(rows):
                ball = np.flatnonzero(inside[i])
                pick = ball if len(ball) <= k else rng.choice(ball, size=k, replace=False)
                new[u] = phi[pick].mean(axis=0)
        disp = np.abs(new - phi).sum()
        traj.record(disp, new.mean(axis=0).sum())
        phi = new
        if disp <= D:
            traj.converged = True
            break
    if return_trajectory:
        return phi, traj
    return phi
