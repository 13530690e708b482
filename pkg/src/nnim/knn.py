"""Exact and forest-based approximate k-nearest-neighbour search.

All searches share one total order: the query point itself is always a
member, the remaining ``k - 1`` slots go to the other points ranked by
``(distance, id)``.  Output rows are sorted by ``(distance, id)``.

Reported distances always come from explicit coordinate differences so
that exact ties stay exact.  The ``|x|^2 + |y|^2 - 2xy`` expansion is only
used to screen candidates, with a rounding margin wide enough that no true
neighbour is dropped.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

METRICS = ("euclidean", "hamming")
_BLOCK_BYTES = 64 * 2**20


class Neighbors(NamedTuple):
    """k-NN result: ``indices[u]`` and ``distances[u]`` hold u's neighbour set."""

    indices: np.ndarray
    distances: np.ndarray
    metric: str
    stats: dict

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def neighbor_set(self, u: int) -> list[tuple[int, float]]:
        return list(zip(self.indices[u].tolist(), self.distances[u].tolist()))


def resolve_k(policy, n: int) -> int:
    """Turn a k policy (``"log"``, ``"sqrt"`` or an integer) into a count in ``[1, n]``."""
    if n < 1:
        raise ValueError("need at least one point")
    if isinstance(policy, str):
        p = policy.strip().lower()
        if p == "log":
            k = math.ceil(math.log(n)) if n > 1 else 1
        elif p == "sqrt":
            k = math.ceil(math.sqrt(n))
        else:
            k = int(p)
    else:
        k = int(policy)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return min(k, n)


def _check_points(points, metric):
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    x = np.asarray(points)
    if x.ndim == 1:
        x = x[:, None]
    if metric == "hamming":
        if not np.isin(x, (0, 1)).all():
            raise ValueError("hamming metric needs binary points")
        return np.ascontiguousarray(x, dtype=np.float64)
    return np.ascontiguousarray(x, dtype=np.float64)


def rank_distances(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Order-preserving distances between rows of ``a`` and ``b``.

    Hamming counts, or *squared* Euclidean distances.
    """
    if metric == "hamming":
        # exact in float64 for binary data
        return a.sum(1)[:, None] + b.sum(1)[None, :] - 2.0 * (a @ b.T)
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def to_metric(rank_d: np.ndarray, metric: str) -> np.ndarray:
    return np.sqrt(rank_d) if metric == "euclidean" else rank_d


def _select_rows(dist: np.ndarray, k: int) -> np.ndarray:
    """Per row, indices of ``k`` smallest entries under (value, column) order.

    ``dist`` must already carry ``-1`` at the self column.  Returns a
    ``(b, k)`` array sorted by (value, column).
    """
    b, n = dist.shape
    if k == n:
        chosen = np.broadcast_to(np.arange(n), (b, n))
    else:
        kth = np.partition(dist, k - 1, axis=1)[:, k - 1:k]
        below = dist < kth
        need = k - below.sum(1, keepdims=True)
        at = dist == kth
        # lowest-id ties at the boundary value fill the remaining slots
        take = at & (np.cumsum(at, axis=1) <= need)
        mask = below | take
        chosen = np.nonzero(mask)[1].reshape(b, k)
    vals = np.take_along_axis(dist, chosen, axis=1)
    order = np.lexsort((chosen, vals), axis=1)
    return np.take_along_axis(chosen, order, axis=1)


def _screened_euclidean(x: np.ndarray, k: int, block_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean k-NN using the matmul expansion only as a filter.

    Any pair whose expanded squared distance lies within the rounding
    bound of the k-th smallest is re-measured from explicit differences,
    so the final (distance, id) ranking is the same as brute force.
    """
    n, d = x.shape
    sq = np.einsum("ij,ij->i", x, x)
    eps = 4.0 * (d + 2) * np.finfo(np.float64).eps
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, block_size):
        rows = np.arange(start, min(n, start + block_size))
        approx = sq[rows, None] + sq[None, :] - 2.0 * (x[rows] @ x.T)
        approx[np.arange(len(rows)), rows] = -np.inf
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        kth = np.maximum(kth, 0.0)
        tol = eps * (sq[rows] + sq.max()) + 1e-300
        r, c = np.nonzero(approx <= (kth + 2.0 * tol)[:, None])
        diff = x[rows[r]] - x[c]
        exact = np.einsum("ij,ij->i", diff, diff)
        exact[rows[r] == c] = -1.0
        order = np.lexsort((c, exact, r))
        r, c, exact = r[order], c[order], exact[order]
        starts = np.searchsorted(r, np.arange(len(rows)))
        pos = np.arange(len(r)) - starts[r]
        keep = pos < k
        sel_c = c[keep].reshape(len(rows), k)
        sel_d = np.maximum(exact[keep], 0.0).reshape(len(rows), k)
        order = np.lexsort((sel_c, sel_d), axis=1)
        idx[rows] = np.take_along_axis(sel_c, order, axis=1)
        dist[rows] = np.sqrt(np.take_along_axis(sel_d, order, axis=1))
    return idx, dist


def exact_knn(points, k: int, metric: str = "euclidean", block_size: int | None = None) -> Neighbors:
    """Brute-force k-NN of every point against all points."""
    x = _check_points(points, metric)
    n, d = x.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        warnings.warn(f"k={k} exceeds the number of points {n}; clamping", stacklevel=2)
        k = n
    if metric == "euclidean" and block_size is None:
        idx, dist = _screened_euclidean(x, k, max(1, min(n, _BLOCK_BYTES // (8 * n))))
        return Neighbors(idx, dist, metric, {"mode": "exact"})
    if block_size is None:
        per_row = n * (d if metric == "euclidean" else 1) * 8
        block_size = max(1, min(n, _BLOCK_BYTES // max(per_row, 1)))
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, block_size):
        rows = np.arange(start, min(n, start + block_size))
        rd = rank_distances(x[rows], x, metric)
        rd[np.arange(len(rows)), rows] = -1.0
        chosen = _select_rows(rd, k)
        vals = np.take_along_axis(rd, chosen, axis=1)
        # restore (distance, id) order now that self carries its true distance
        vals[vals < 0] = 0.0
        order = np.lexsort((chosen, vals), axis=1)
        idx[rows] = np.take_along_axis(chosen, order, axis=1)
        dist[rows] = to_metric(np.take_along_axis(vals, order, axis=1), metric)
    return Neighbors(idx, dist, metric, {"mode": "exact"})


def knn_variable_k(points, ks, metric: str = "hamming") -> list[np.ndarray]:
    """Exact neighbour sets with a per-point size ``ks[u]`` (same total order)."""
    x = _check_points(points, metric)
    n, d = x.shape
    ks = np.minimum(np.asarray(ks, dtype=np.int64), n)
    if (ks < 1).any():
        raise ValueError("every k must be >= 1")
    per_row = n * (d if metric == "euclidean" else 1) * 8
    block = max(1, min(n, _BLOCK_BYTES // max(per_row, 1)))
    out: list[np.ndarray] = []
    for start in range(0, n, block):
        rows = np.arange(start, min(n, start + block))
        rd = rank_distances(x[rows], x, metric)
        rd[np.arange(len(rows)), rows] = -1.0
        order = np.argsort(rd, axis=1, kind="stable")
        out.extend(order[i, : ks[u]] for i, u in enumerate(rows))
    return out


@dataclass
class LshForest:
    """Forest of random-hyperplane partition trees over a fixed point set.

    Each tree recursively splits its point set by the perpendicular
    bisector of two randomly drawn points until a cell holds at most
    ``leaf_capacity`` points.  Only the leaves are kept: a point's
    candidate set is the union of the leaves holding it.
    """

    leaves: list[list[np.ndarray]]
    n_points: int
    leaf_capacity: int
    seed: int
    stats: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.leaves)

    @classmethod
    def build(cls, points, n_trees: int = 10, leaf_capacity: int = 64, seed: int = 17) -> "LshForest":
        x = np.asarray(points, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if n_trees < 1 or leaf_capacity < 1:
            raise ValueError("n_trees and leaf_capacity must be >= 1")
        trees = [_build_tree(x, leaf_capacity, np.random.default_rng([seed, t])) for t in range(n_trees)]
        return cls(trees, len(x), leaf_capacity, seed)


def _build_tree(x: np.ndarray, cap: int, rng: np.random.Generator) -> list[np.ndarray]:
    leaves = []
    stack = [np.arange(len(x))]
    while stack:
        idx = stack.pop()
        if len(idx) <= cap:
            leaves.append(idx)
            continue
        a, b = rng.choice(len(idx), size=2, replace=False)
        normal = x[idx[a]] - x[idx[b]]
        side = None
        if np.any(normal):
            offset = normal @ (x[idx[a]] + x[idx[b]]) / 2.0
            proj = x[idx] @ normal - offset
            side = proj > 0
            # points on the hyperplane go to a random side
            on = proj == 0
            if on.any():
                side[on] = rng.random(on.sum()) < 0.5
            if side.all() or not side.any():
                side = None
        if side is None:
            side = np.zeros(len(idx), dtype=bool)
            side[rng.permutation(len(idx))[: len(idx) // 2]] = True
        stack.append(idx[~side])
        stack.append(idx[side])
    return leaves


def _leaf_candidates(x, leaves, kk, metric, n):
    """Top-``kk`` within each leaf for every point, as (n, kk) id/rank-distance arrays."""
    cand_i = np.full((n, kk), n, dtype=np.int64)
    cand_d = np.full((n, kk), np.inf)
    by_size: dict[int, list[np.ndarray]] = {}
    for leaf in leaves:
        by_size.setdefault(len(leaf), []).append(leaf)
    for size, group in by_size.items():
        m = min(kk, size)
        step = max(1, _BLOCK_BYTES // max(1, size * size * (x.shape[1] if metric == "euclidean" else 1) * 8))
        for s in range(0, len(group), step):
            members = np.stack(group[s:s + step])  # (L, size)
            pts = x[members]
            if metric == "hamming":
                ab = np.einsum("lid,ljd->lij", pts, pts)
                r = pts.sum(2)
                rd = r[:, :, None] + r[:, None, :] - 2.0 * ab
            else:
                diff = pts[:, :, None, :] - pts[:, None, :, :]
                rd = np.einsum("lijk,lijk->lij", diff, diff)
            diag = np.arange(size)
            rd[:, diag, diag] = -1.0
            order = np.argsort(rd, axis=2, kind="stable")[:, :, :m]
            # stable argsort orders ties by in-leaf position; leaves are id-sorted
            ids = np.take_along_axis(np.broadcast_to(members[:, None, :], rd.shape), order, axis=2)
            ds = np.take_along_axis(rd, order, axis=2)
            flat_rows = members.reshape(-1)
            cand_i[flat_rows, :m] = ids.reshape(-1, m)
            cand_d[flat_rows, :m] = ds.reshape(-1, m)
    return cand_i, cand_d


def lsh_knn(forest: LshForest, points, k: int, metric: str = "euclidean") -> Neighbors:
    """Approximate k-NN using the forest's leaves as candidate pools.

    Candidates are re-ranked exactly.  Rows whose pool holds fewer than
    ``k`` distinct points are topped up with seeded random ids.
    """
    x = _check_points(points, metric)
    n = x.shape[0]
    if forest.n_points != n:
        raise ValueError("forest was built over a different point set")
    if k > n:
        warnings.warn(f"k={k} exceeds the number of points {n}; clamping", stacklevel=2)
        k = n
    parts_i, parts_d = [], []
    for leaves in forest.leaves:
        leaves = [np.sort(leaf) for leaf in leaves]
        ci, cd = _leaf_candidates(x, leaves, k, metric, n)
        parts_i.append(ci)
        parts_d.append(cd)
    cand_i = np.concatenate(parts_i, axis=1)
    cand_d = np.concatenate(parts_d, axis=1)

    order = np.lexsort((cand_i, cand_d), axis=1)
    cand_i = np.take_along_axis(cand_i, order, axis=1)
    cand_d = np.take_along_axis(cand_d, order, axis=1)
    dup = np.zeros_like(cand_i, dtype=bool)
    dup[:, 1:] = cand_i[:, 1:] == cand_i[:, :-1]
    dup |= cand_i == n
    cand_i[dup] = n
    cand_d[dup] = np.inf
    order = np.lexsort((cand_i, cand_d), axis=1)
    cand_i = np.take_along_axis(cand_i, order, axis=1)[:, :k]
    cand_d = np.take_along_axis(cand_d, order, axis=1)[:, :k]

    short = np.flatnonzero((cand_i == n).any(axis=1))
    if len(short):
        rng = np.random.default_rng([forest.seed, 0xBAC])
        for u in short:
            have = cand_i[u][cand_i[u] < n]
            pool = np.setdiff1d(np.arange(n), have)
            extra = rng.choice(pool, size=k - len(have), replace=False)
            rd = rank_distances(x[[u]], x[extra], metric)[0]
            ids = np.concatenate([have, extra])
            ds = np.concatenate([cand_d[u][: len(have)], rd])
            o = np.lexsort((ids, ds))
            cand_i[u], cand_d[u] = ids[o], ds[o]

    self_rows = cand_i == np.arange(n)[:, None]
    cand_d[self_rows] = 0.0
    order = np.lexsort((cand_i, cand_d), axis=1)
    idx = np.take_along_axis(cand_i, order, axis=1)
    dist = to_metric(np.take_along_axis(cand_d, order, axis=1), metric)
    stats = {"mode": "lsh", "trees": forest.n_trees, "backfilled_rows": int(len(short))}
    return Neighbors(idx, dist, metric, stats)


def find_neighbors(points, k: int, metric: str = "euclidean", mode: str = "exact",
                   trees: int = 10, leaf_capacity: int = 64, seed: int = 17) -> Neighbors:
    """Dispatch to :func:`exact_knn` or a freshly built forest + :func:`lsh_knn`."""
    if mode == "exact":
        return exact_knn(points, k, metric)
    if mode == "lsh":
        forest = LshForest.build(points, trees, leaf_capacity, seed)
        return lsh_knn(forest, points, k, metric)
    raise ValueError(f"unknown index mode {mode!r}")


def recall(approx: Neighbors, exact: Neighbors) -> float:
    """Mean fraction of exact neighbours recovered per point."""
    hits = [len(np.intersect1d(a, e)) / len(e) for a, e in zip(approx.indices, exact.indices)]
    return float(np.mean(hits))


def jaccard_overlap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Jaccard similarity of two neighbour-id matrices."""
    out = np.empty(len(a))
    for u, (ra, rb) in enumerate(zip(a, b)):
        inter = len(np.intersect1d(ra, rb))
        out[u] = inter / (len(np.union1d(ra, rb)))
    return out
