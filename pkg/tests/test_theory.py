import json
from fractions import Fraction

import numpy as np
import pytest

from nnim.inference import exact_mean_field_step
from nnim.theory import (SCALE, check_finite_convergence, check_hamming_concentration, check_iteration_bound,
                         check_ordering_and_splits, cluster_values, float_run, integer_step, knn_overlap_diagnostic,
                         order_violations, random_instance, run_exact, sigma_sizes)


def test_integer_step_matches_fraction_oracle():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        nums = random_instance(rng, 9)
        k = int(rng.integers(1, 9))
        state = [Fraction(x, SCALE) for x in nums]
        ints = list(nums)
        denom = SCALE
        for _ in range(4):
            state = exact_mean_field_step(state, k)
            ints = integer_step(ints, k)
            denom *= k
            assert [Fraction(x, denom) for x in ints] == state


def test_k_equals_n_consensus_in_one_step():
    rng = np.random.default_rng(1)
    nums = random_instance(rng, 7)
    res = run_exact(nums, 7, 10)
    assert res["fixed_point_step"] == 1
    assert res["sigma"] == [7] * 7


def test_single_agent_is_fixed_at_zero():
    assert run_exact([123], 1, 5)["fixed_point_step"] == 0


def test_all_equal_start_is_one_class():
    res = run_exact([5] * 6, 3, 5)
    assert res["fixed_point_step"] == 0 and res["sigma"] == [6] * 6
    assert order_violations([5] * 6, integer_step([5] * 6, 3)) == 0


def test_geometric_approach_never_terminates():
    # agent 0 moves halfway to the others forever: no exact fixed point
    res = run_exact([0, SCALE, SCALE], 2, 60)
    assert res["fixed_point_step"] is None
    assert sigma_sizes(res["state"]) == [1, 2, 2]


def test_counterexamples_are_dumped(tmp_path):
    rep = check_finite_convergence(3, 2, trials=10, seed=1, step_cap=30, dump_dir=tmp_path)
    assert rep["n_counterexamples"] > 0
    data = json.loads((tmp_path / "convergence_n3_k2_s1.json").read_text())
    assert len(data["counterexamples"]) == rep["n_counterexamples"]
    assert rep["termination_violations"] == 0


def test_bound_zero_steps_when_first_update_is_small():
    rep = check_iteration_bound(10, 2, D=100.0, trials=3)
    assert rep["median_steps"] == 0.0 and rep["max_steps_seen"] == 0


def test_order_and_range_along_integer_runs():
    for seed in range(15):
        rng = np.random.default_rng([4, seed])
        nums = random_instance(rng, 12)
        k = int(rng.integers(2, 6))
        for _ in range(25):
            new = integer_step(nums, k)
            assert order_violations(nums, new) == 0
            assert max(new) - min(new) <= k * (max(nums) - min(nums))
            nums = new


def test_ordering_suite_small():
    rep = check_ordering_and_splits(10, 3, trials=4, seed=2)
    assert rep["order_violations"] == 0 and rep["split_violations"] == 0
    assert rep["final_cluster_counts"] == {"2": 4}


def test_rational_and_float_clusterings_agree():
    # planted groups of exactly k agents, far apart, reach an exact fixed point
    for seed in range(20):
        rng = np.random.default_rng([6, seed])
        k = int(rng.integers(2, 5))
        groups = int(rng.integers(2, 5))
        centres = 0.1 + 0.25 * np.arange(groups)
        x = np.concatenate([c + 0.02 * rng.random(k) for c in centres])
        perm = rng.permutation(len(x))
        x = x[perm]
        nums = [int(round(v * SCALE)) for v in x]
        res = run_exact(nums, k, 20)
        assert res["fixed_point_step"] is not None
        exact_classes = {}
        for u, v in enumerate(res["state"]):
            exact_classes.setdefault(v, []).append(u)
        xf, _ = float_run(np.array(nums, dtype=float) / SCALE, k, 0.0, 50)
        assert sorted(map(sorted, cluster_values(xf))) == sorted(map(sorted, exact_classes.values()))


def test_overlap_diagnostic_trivial_cases():
    xi = (np.random.default_rng(0).random((12, 5)) < 0.5).astype(float)
    rep = knn_overlap_diagnostic(xi, 3, steps=3)
    assert rep["mean_overlap"][0] == 1.0
    full = knn_overlap_diagnostic(np.random.default_rng(1).random((8, 4)), 8, steps=3)
    assert full["mean_overlap"] == [1.0] * 4


def test_overlap_trace_length():
    rep = knn_overlap_diagnostic(np.random.default_rng(2).random((100, 6)), 5, steps=6)
    assert len(rep["mean_overlap"]) == 7
    assert all(0 <= v <= 1 for v in rep["mean_overlap"])


def test_concentration_holds():
    rep = check_hamming_concentration()
    assert all(row["holds"] for row in rep["rows"])


def test_cluster_values():
    assert cluster_values([0.3, 0.1, 0.1 + 1e-9, 0.3]) == [[1, 2], [0, 3]]


def test_bound_example_k4_n64():
    rep = check_iteration_bound(64, 4, D=1e-3, trials=50)
    assert rep["median_steps"] <= 10 * 5


@pytest.mark.xfail(strict=True, reason="measured medians grow with k (10, 18, 30 for k=2, 4, 8 at n=64)")
def test_doubling_k_weakly_decreases_median_steps():
    medians = [check_iteration_bound(64, k, D=1e-3, trials=100)["median_steps"] for k in (2, 4, 8)]
    assert medians[0] >= medians[1] >= medians[2]
