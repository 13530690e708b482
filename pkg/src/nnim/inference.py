"""Mean-field inference: deterministic k-NN averaging of belief vectors.

Peripheral beliefs start at the mean label vector of the core members each
user follows (optionally in a PCA space fitted on core rows only) and are
repeatedly replaced by the mean of their Euclidean k-NN set, optionally
pulled back towards the starting beliefs with weight ``alpha``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import CorePartition
from .dynamics import Trajectory
from .graph import LabeledGraph
from .knn import Neighbors, find_neighbors, resolve_k

logger = logging.getLogger(__name__)

VB_CLAMP = 1e-12


@dataclass
class PcaTransform:
    mean: np.ndarray
    axes: np.ndarray  # (d', d), orthonormal rows
    explained_variance_ratio: np.ndarray  # per retained axis

    @property
    def dim(self) -> int:
        return self.axes.shape[0]

    @property
    def retained_variance(self) -> float:
        return float(self.explained_variance_ratio.sum())

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.axes.T

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.axes + self.mean


def fit_pca(core_labels, variance_keep: float = 0.95) -> PcaTransform:
    """Principal axes of the centred rows, keeping the fewest reaching ``variance_keep``."""
    x = np.asarray(core_labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs at least two rows")
    if not 0 < variance_keep <= 1:
        raise ValueError("variance_keep must lie in (0, 1]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    var = s**2
    total = var.sum()
    if total <= 0:
        warnings.warn("PCA input has zero variance; keeping one degenerate axis", stacklevel=2)
        axis = np.zeros((1, x.shape[1]))
        axis[0, 0] = 1.0
        return PcaTransform(mean, axis, np.zeros(1))
    ratio = var / total
    cum = np.cumsum(ratio)
    dim = int(np.searchsorted(cum, variance_keep - 1e-12) + 1)
    dim = min(dim, len(ratio))
    return PcaTransform(mean, vt[:dim].copy(), ratio[:dim].copy())


@dataclass
class BeliefMatrix:
    phi: np.ndarray
    space: str = "original"
    t: int = 0


def initialize_beliefs(part: CorePartition, g: LabeledGraph, pca: PcaTransform | None = None) -> BeliefMatrix:
    """Each peripheral row becomes the mean (reduced) label vector of the cores it follows."""
    feats = g.labels.astype(np.float64)
    space = "original"
    if pca is not None:
        feats = pca.transform(feats)
        space = "reduced"
    phi = np.empty((part.n, feats.shape[1]))
    for j, (u, cores) in enumerate(zip(part.periphery, part.bipartite)):
        if len(cores) == 0:
            raise ValueError(f"peripheral node {u} follows no core member")
        phi[j] = feats[cores].mean(axis=0)
    return BeliefMatrix(phi, space, 0)


def inference_step(beliefs: BeliefMatrix, k: int, index_mode: str = "exact", alpha: float = 0.0,
                   phi0: BeliefMatrix | None = None, trees: int = 10, leaf_capacity: int = 64,
                   seed: int = 17) -> tuple[BeliefMatrix, Neighbors]:
    """``phi_u <- (sum_{v in K(u)} phi_v + alpha * phi0_u) / (k + alpha)``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    phi = beliefs.phi
    nbrs = find_neighbors(phi, k, "euclidean", index_mode, trees, leaf_capacity, seed)
    total = phi[nbrs.indices].sum(axis=1)
    if alpha:
        if phi0 is None or phi0.phi.shape != phi.shape:
            raise ValueError("alpha > 0 needs row-aligned initial beliefs")
        new = (total + alpha * phi0.phi) / (nbrs.k + alpha)
    else:
        new = total / nbrs.k
    return BeliefMatrix(new, beliefs.space, beliefs.t + 1), nbrs


def variational_bound(prev, nxt, neighbor_idx, theta: float = VB_CLAMP) -> float:
    """Sum over coordinates, users and their neighbours of the Bernoulli log-likelihood
    of neighbour beliefs under the user's next belief (clamped to ``[theta, 1-theta]``)."""
    prev = np.asarray(getattr(prev, "phi", prev), dtype=np.float64)
    nxt = np.clip(np.asarray(getattr(nxt, "phi", nxt), dtype=np.float64), theta, 1 - theta)
    if prev.ndim == 1:
        prev, nxt = prev[:, None], nxt[:, None]
    idx = np.asarray(getattr(neighbor_idx, "indices", neighbor_idx))
    neigh_sum = prev[idx].sum(axis=1)
    k = idx.shape[1]
    return float((neigh_sum * np.log(nxt) + (k - neigh_sum) * np.log1p(-nxt)).sum())


@dataclass
class InferenceConfig:
    k: str | int = "log"
    D: float = 1e-3
    max_steps: int = 100
    alpha: float = 0.0
    pca_variance: float | None = 0.95
    index: str = "exact"
    trees: int = 10
    leaf_capacity: int = 64
    seed: int = 17

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class InferenceResult:
    scores: np.ndarray  # |U| x d, original space, clipped to [0, 1]
    mu: np.ndarray  # macroscopic parameters (column mean of scores)
    trajectory: Trajectory
    beliefs: BeliefMatrix  # final state in the working space
    k: int
    pca: PcaTransform | None = None
    info: dict = field(default_factory=dict)


def run_inference(part: CorePartition, g: LabeledGraph, config: InferenceConfig | None = None) -> InferenceResult:
    """Initialize from the core, iterate :func:`inference_step` until the entrywise
    L1 change is ``<= D`` (or ``max_steps``), then map back and clip."""
    cfg = config or InferenceConfig()
    if part.n == 0:
        raise ValueError("partition has an empty periphery")
    pca = None
    if cfg.pca_variance is not None:
        if len(part.core) >= 2:
            pca = fit_pca(g.labels[part.core], cfg.pca_variance)
        else:
            warnings.warn("fewer than two core nodes; skipping PCA", stacklevel=2)
    phi0 = initialize_beliefs(part, g, pca)
    k = resolve_k(cfg.k, part.n)
    beliefs = phi0
    traj = Trajectory()
    for step in range(cfg.max_steps):
        new, _ = inference_step(beliefs, k, cfg.index, cfg.alpha, phi0, cfg.trees,
                                cfg.leaf_capacity, cfg.seed * 1_000_003 + step)
        disp = np.abs(new.phi - beliefs.phi).sum()
        traj.record(disp, np.abs(new.phi.mean(axis=0)).sum())
        beliefs = new
        if disp <= cfg.D:
            traj.converged = True
            break
    if cfg.max_steps and not traj.converged:
        logger.warning("run_inference: no convergence within %d steps", cfg.max_steps)
    scores = beliefs.phi if pca is None else pca.inverse_transform(beliefs.phi)
    scores = np.clip(scores, 0.0, 1.0)
    info = {"k": k, "pca_dim": pca.dim if pca else None,
            "pca_retained_variance": pca.retained_variance if pca else None}
    return InferenceResult(scores, scores.mean(axis=0), traj, beliefs, k, pca, info)


def exact_mean_field_step(values: Sequence[Fraction], k: int, alpha: Fraction | int = 0,
                          initial: Sequence[Fraction] | None = None) -> list[Fraction]:
    """One 1-D update in exact rational arithmetic with the (distance, id) order."""
    n = len(values)
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    out = []
    for u, x in enumerate(values):
        others = sorted((abs(values[v] - x), v) for v in range(n) if v != u)
        total = x + sum(values[v] for _, v in others[: k - 1])
        if alpha:
            total += alpha * initial[u]
        out.append(Fraction(total) / (k + alpha))
    return out
