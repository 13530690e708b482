"""Empirical checks of the convergence behaviour of 1-D k-NN averaging.

The exact path keeps every agent's value as an integer numerator over the
common denominator ``scale * k^t``; one step replaces each numerator with
the sum of its k-NN numerators, which is exact rational arithmetic without
``Fraction`` overhead.  All checks use alpha = 0, no PCA and exact k-NN.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from collections import Counter
from pathlib import Path

import numpy as np

from .dynamics import nnim_step, OpinionState, sample_realizations
from .knn import exact_knn, jaccard_overlap

logger = logging.getLogger(__name__)

SCALE = 10**6


def integer_step(nums: list[int], k: int) -> list[int]:
    """Exact update on numerators; the denominator grows by a factor ``k``."""
    n = len(nums)
    out = []
    for u, x in enumerate(nums):
        best = heapq.nsmallest(k - 1, ((abs(nums[v] - x), v) for v in range(n) if v != u))
        out.append(x + sum(nums[v] for _, v in best))
    return out


def is_fixed_point(old: list[int], new: list[int], k: int) -> bool:
    return all(b == k * a for a, b in zip(old, new))


def sigma_sizes(values) -> list[int]:
    """Size of each agent's equal-value class."""
    counts = Counter(values)
    return [counts[v] for v in values]


def random_instance(rng: np.random.Generator, n: int, scale: int = SCALE) -> list[int]:
    return [int(x) for x in rng.integers(0, scale + 1, size=n)]


def run_exact(nums: list[int], k: int, step_cap: int) -> dict:
    """Iterate :func:`integer_step` until an exact fixed point or ``step_cap``.

    ``fixed_point_step`` is the first t whose state equals its successor.
    """
    nums = list(nums)
    for t in range(step_cap + 1):
        new = integer_step(nums, k)
        if is_fixed_point(nums, new, k):
            return {"fixed_point_step": t, "state": nums, "sigma": sigma_sizes(nums)}
        nums = new
    return {"fixed_point_step": None, "state": nums, "sigma": sigma_sizes(nums)}


def _dump(dump_dir, name, payload):
    if dump_dir is None:
        return None
    path = Path(dump_dir)
    path.mkdir(parents=True, exist_ok=True)
    target = path / f"{name}.json"
    target.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")
    return str(target)


def check_finite_convergence(n: int, k: int, trials: int = 200, seed: int = 17,
                             step_cap: int = 200, dump_dir=None) -> dict:
    """Fraction of random 1-D instances reaching an exact fixed point within ``step_cap``.

    At every fixed point found, each equal-value class must hold at least
    ``k`` agents.  Non-converging instances are kept as counterexamples.
    """
    steps, counterexamples = [], []
    termination_violations = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, n, k, trial])
        inst = random_instance(rng, n)
        res = run_exact(inst, k, step_cap)
        if res["fixed_point_step"] is None:
            small = [u for u, s in enumerate(res["sigma"]) if s < k]
            counterexamples.append({"trial": trial, "instance": inst, "k": k, "scale": SCALE,
                                    "agents_with_small_sigma": small})
        else:
            steps.append(res["fixed_point_step"])
            if min(res["sigma"]) < k:
                termination_violations += 1
    report = {
        "suite": "convergence", "n": n, "k": k, "trials": trials, "step_cap": step_cap,
        "exact_converged": len(steps), "rate": len(steps) / trials if trials else 1.0,
        "fixed_point_steps": steps, "termination_violations": termination_violations,
        "n_counterexamples": len(counterexamples),
    }
    if counterexamples:
        report["counterexample_file"] = _dump(dump_dir, f"convergence_n{n}_k{k}_s{seed}",
                                              {"counterexamples": counterexamples})
    return report


def float_run(x0: np.ndarray, k: int, D: float, max_steps: int) -> tuple[np.ndarray, list[float]]:
    """Floating-point 1-D averaging; stops once a step moves ``<= D`` in total."""
    x = np.asarray(x0, dtype=np.float64).copy()
    disps = []
    for _ in range(max_steps):
        nb = exact_knn(x, k, "euclidean").indices
        new = x[nb].mean(axis=1)
        disps.append(float(np.abs(new - x).sum()))
        x = new
        if disps[-1] <= D:
            break
    return x, disps


def check_iteration_bound(n: int, k: int, D: float = 1e-3, trials: int = 50, seed: int = 17,
                          C: float = 10.0, max_steps: int = 10_000) -> dict:
    """Steps until the stop test passes versus ``C * log(1/D) / log k``.

    ``steps`` counts updates made before the first update whose total
    movement is ``<= D`` (so 0 when the first update already passes).
    The log-displacement slope is reported next to ``-log(k)/2``.
    """
    if k < 2:
        raise ValueError("the bound needs k >= 2")
    counts, slopes = [], []
    for trial in range(trials):
        rng = np.random.default_rng([seed, n, k, trial])
        _, disps = float_run(rng.random(n), k, D, max_steps)
        counts.append(len(disps) - 1 if disps and disps[-1] <= D else max_steps)
        pos = [(t, math.log(v)) for t, v in enumerate(disps) if v > 0]
        if len(pos) >= 2:
            t, y = np.array(pos).T
            slopes.append(float(np.polyfit(t, y, 1)[0]))
    bound = C * math.log(1 / D) / math.log(k)
    median = float(np.median(counts))
    return {
        "suite": "bound", "n": n, "k": k, "D": D, "C": C, "trials": trials,
        "median_steps": median, "max_steps_seen": int(max(counts)), "bound": bound,
        "within_bound": median <= bound,
        "fitted_log_decay_slope": float(np.median(slopes)) if slopes else None,
        "reference_slope": -0.5 * math.log(k),
    }


def order_violations(old: list[int], new: list[int]) -> int:
    """Pairs whose relative order (or equality) is not preserved by a step."""
    order = sorted(range(len(old)), key=lambda u: (old[u], u))
    bad = 0
    for a, b in zip(order, order[1:]):
        if new[a] > new[b] or (old[a] == old[b] and new[a] != new[b]):
            bad += 1
    return bad


def _crossing(nums, k, members_a, members_b):
    """True if either boundary agent's k-NN set reaches into the other cluster."""
    a_hi = max(members_a, key=lambda u: (nums[u], u))
    b_lo = min(members_b, key=lambda u: (nums[u], -u))
    set_b = set(members_b)
    set_a = set(members_a)
    for u, other in ((a_hi, set_b), (b_lo, set_a)):
        best = heapq.nsmallest(k - 1, ((abs(nums[v] - nums[u]), v) for v in range(len(nums)) if v != u))
        if any(v in other for _, v in best):
            return True
    return False


def check_ordering_and_splits(n: int, k: int, trials: int = 50, seed: int = 17, step_cap: int = 60,
                              gap: float = 0.5, width: float = 0.05, dump_dir=None) -> dict:
    """Order persistence on random instances and split persistence on planted pairs.

    Planted instances put ``n // 2`` agents in ``[0.2, 0.2 + width]`` and the
    rest ``gap`` higher.  After the first step at which the boundary agents'
    neighbourhoods stop crossing, the inter-cluster distance must never
    shrink and the clusters must stay split.
    """
    order_bad, split_bad, split_seen = 0, 0, 0
    final_groups = []
    dumps = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, n, k, trial, 1])
        nums = random_instance(rng, n)
        for _ in range(step_cap):
            new = integer_step(nums, k)
            v = order_violations(nums, new)
            if v:
                order_bad += 1
                dumps.append({"kind": "order", "trial": trial, "state": nums, "k": k})
                break
            if is_fixed_point(nums, new, k):
                break
            nums = new

        rng = np.random.default_rng([seed, n, k, trial, 2])
        half = n // 2
        lo = 0.2 + width * rng.random(half)
        hi = 0.2 + gap + width * rng.random(n - half)
        x0 = np.concatenate([lo, hi])
        perm = rng.permutation(n)
        x0 = x0[perm]
        a = [int(u) for u in np.flatnonzero(perm < half)]
        b = [int(u) for u in np.flatnonzero(perm >= half)]
        nums = [int(round(v * SCALE)) for v in x0]
        split_at, last_gap, violated = None, None, False
        for t in range(step_cap):
            split_now = not _crossing(nums, k, a, b)
            cur_gap = min(nums[v] for v in b) - max(nums[u] for u in a)
            if split_at is None and split_now:
                split_at = t
            elif split_at is not None:
                if not split_now or cur_gap < last_gap * k:
                    violated = True
                    break
            last_gap = cur_gap
            new = integer_step(nums, k)
            if is_fixed_point(nums, new, k):
                break
            nums = new
        if split_at is not None:
            split_seen += 1
        if violated:
            split_bad += 1
            dumps.append({"kind": "split", "trial": trial, "instance": x0.tolist(), "k": k})
        xf, _ = float_run(x0, k, 0.0, 400)
        final_groups.append(len(cluster_values(xf)))
    report = {
        "suite": "ordering", "n": n, "k": k, "trials": trials,
        "order_violations": order_bad, "split_violations": split_bad,
        "planted_splits_observed": split_seen,
        "final_cluster_counts": Counter(final_groups),
    }
    report["final_cluster_counts"] = {str(c): m for c, m in sorted(report["final_cluster_counts"].items())}
    if dumps:
        report["counterexample_file"] = _dump(dump_dir, f"ordering_n{n}_k{k}_s{seed}", {"violations": dumps})
    return report


def cluster_values(x, tol: float = 1e-6) -> list[list[int]]:
    """Group agents whose sorted values are chained within ``tol``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    groups = [[int(order[0])]]
    for prev, cur in zip(order, order[1:]):
        if x[cur] - x[prev] <= tol:
            groups[-1].append(int(cur))
        else:
            groups.append([int(cur)])
    return groups


def check_hamming_concentration(d: int = 64, draws: int = 10_000, deltas=(0.1, 0.05), seed: int = 17) -> dict:
    """Monte-Carlo tail of the Hamming distance between independent Bernoulli vectors.

    For each ``delta`` the empirical probability of deviating from the mean
    by more than ``sqrt(d log(1/delta) / 2)`` must not exceed ``delta``.
    """
    rng = np.random.default_rng(seed)
    p, q = rng.random(d), rng.random(d)
    x = rng.random((draws, d)) < p
    y = rng.random((draws, d)) < q
    h = (x != y).sum(axis=1)
    mean = float((p * (1 - q) + q * (1 - p)).sum())
    rows = []
    for delta in deltas:
        radius = math.sqrt(d * math.log(1 / delta) / 2)
        frac = float(np.mean(np.abs(h - mean) > radius))
        rows.append({"delta": delta, "radius": radius, "tail_fraction": frac, "holds": frac <= delta})
    return {"suite": "concentration", "d": d, "draws": draws, "expected_hamming": mean, "rows": rows}


def knn_overlap_diagnostic(xi0, k: int, steps: int = 10, seed: int = 17) -> dict:
    """Mean Jaccard overlap between Hamming k-NN sets of the realizations and
    Euclidean k-NN sets of the parameters, at every step of a stochastic run."""
    xi0 = np.asarray(xi0, dtype=np.float64)
    if xi0.ndim == 1:
        xi0 = xi0[:, None]
    state = OpinionState(sample_realizations(xi0, seed, 0), xi0.copy(), 0)
    trace = []
    for _ in range(steps + 1):
        ham = exact_knn(state.X, k, "hamming").indices
        euc = exact_knn(state.xi, k, "euclidean").indices
        trace.append(float(jaccard_overlap(ham, euc).mean()))
        if state.t == steps:
            break
        state = nnim_step(state, k, seed)
    return {"suite": "overlap", "k": k, "steps": steps, "mean_overlap": trace}
