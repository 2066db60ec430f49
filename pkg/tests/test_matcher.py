import itertools
import warnings

import networkx as nx
import numpy as np
import pytest

from conftest import random_panel
from didmatch._blossom import min_cost_perfect_matching
from didmatch.core import PanelDataset, PanelUnit
from didmatch.distances import DistanceMatrix, build_distance_matrix
from didmatch.exceptions import ValidationError
from didmatch.matcher import (
    MatchedSample,
    balance_report,
    brute_force_match,
    enumerate_perfect_matchings,
    greedy_match,
    handle_odd,
    match_units,
    matching_cost,
    order_pair,
    quantize_costs,
    read_pairs_csv,
    solve_optimal,
    to_matched_sample,
    write_pairs_csv,
)


def dm_from(costs):
    n = len(costs)
    return DistanceMatrix(tuple(f"u{i:02d}" for i in range(n)), np.asarray(costs, dtype=float))


def random_dm(rng, n, scale=1.0):
    c = rng.uniform(0, scale, size=(n, n))
    c = np.triu(c, 1)
    return dm_from(c + c.T)


def test_four_unit_example():
    c = np.array([[0, 1, 5, 5], [1, 0, 5, 5], [5, 5, 0, 1], [5, 5, 1, 0]])
    m = solve_optimal(dm_from(c))
    assert m.pairs == (("u00", "u01"), ("u02", "u03"))
    assert m.total_cost == 2


def test_matching_counts():
    assert sum(1 for _ in enumerate_perfect_matchings(6)) == 15
    assert sum(1 for _ in enumerate_perfect_matchings(8)) == 105


@pytest.mark.parametrize("n", [2, 4, 6, 8, 10])
def test_exact_equals_brute_force(rng, n):
    for _ in range(30):
        dm = random_dm(rng, n)
        assert solve_optimal(dm).total_cost == brute_force_match(dm).total_cost


def test_integer_costs_with_many_ties(rng):
    for _ in range(200):
        n = int(rng.choice([4, 6, 8]))
        c = rng.integers(0, 3, size=(n, n)).astype(float)
        c = np.triu(c, 1)
        dm = dm_from(c + c.T)
        assert solve_optimal(dm).total_cost == brute_force_match(dm).total_cost


@pytest.mark.parametrize("n", [40, 120])
def test_agrees_with_networkx_on_larger_graphs(rng, n):
    c = rng.integers(1, 10_000, size=(n, n))
    c = np.triu(c, 1)
    c = c + c.T
    mate = min_cost_perfect_matching(c.astype(np.int64))
    ours = sum(int(c[i, mate[i]]) for i in range(n)) // 2
    g = nx.Graph()
    for i, j in itertools.combinations(range(n), 2):
        g.add_edge(i, j, weight=int(c[i, j]))
    ref = nx.min_weight_matching(g)
    assert len(ref) == n // 2
    assert ours == sum(int(c[i, j]) for i, j in ref)


def test_output_is_a_perfect_matching(rng):
    dm = random_dm(rng, 60)
    m = solve_optimal(dm)
    flat = [i for p in m.pairs for i in p]
    assert sorted(flat) == sorted(dm.ids)
    assert all(a < b for a, b in m.pairs)
    assert list(m.pairs) == sorted(m.pairs)


def test_deterministic(rng):
    dm = random_dm(rng, 50)
    assert solve_optimal(dm) == solve_optimal(dm)


def test_odd_count_rejected_by_solver():
    with pytest.raises(ValidationError):
        solve_optimal(dm_from(np.zeros((3, 3))))


def test_odd_count_excludes_one_unit(rng):
    dm = random_dm(rng, 7)
    m = match_units(dm)
    assert len(m.pairs) == 3 and len(m.excluded) == 1
    # the exclusion is the best one: brute force over every dropped unit
    best = min(
        brute_force_match(DistanceMatrix(
            tuple(i for k, i in enumerate(dm.ids) if k != d),
            np.delete(np.delete(dm.costs, d, 0), d, 1))).total_cost
        for d in range(7)
    )
    assert m.total_cost == pytest.approx(best, abs=1e-5)


def test_handle_odd_adds_zero_cost_phantom():
    aug, phantom = handle_odd(dm_from(np.ones((3, 3))))
    assert aug.n == 4 and aug.ids[-1] == phantom
    assert (aug.costs[-1] == 0).all()


def test_quantisation_scale_reduction_warns():
    with pytest.warns(UserWarning):
        q, scale = quantize_costs(np.array([[0, 1e12], [1e12, 0]]), 1e6)
    assert scale < 1e6 and q.max() <= 2**50


def test_greedy_is_never_better_than_exact(rng):
    for _ in range(20):
        dm = random_dm(rng, 10)
        assert greedy_match(dm).total_cost >= solve_optimal(dm).total_cost - 1e-5


def test_large_instance_falls_back_to_greedy(rng):
    dm = random_dm(rng, 12)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        m = solve_optimal(dm, max_exact_n=10)
    assert m.objective_certificate == "greedy"


def test_matching_cost_recomputed_from_reals(rng):
    dm = random_dm(rng, 8)
    m = solve_optimal(dm)
    assert m.total_cost == matching_cost(dm, m.pairs)


def test_order_pair_and_ties():
    a = PanelUnit("a", (), 0, 1, 0, 0)
    b = PanelUnit("b", (), 0, 3, 0, 0)
    p = order_pair(a, b)
    assert p.unit_hi.id == "b" and p.gap == 2 and not p.tied
    c = PanelUnit("c", (), 1, 2, 0, 0)
    t = order_pair(c, a)
    assert t.tied and t.unit_hi.id == "a"


def test_matched_sample_rejects_reuse():
    u = PanelUnit("a", (), 0, 1, 0, 0)
    v = PanelUnit("b", (), 0, 0, 0, 0)
    p = order_pair(u, v)
    with pytest.raises(ValidationError):
        MatchedSample((p, p))


def test_pairs_csv_roundtrip(tmp_path, rng):
    ds = random_panel(rng, n=10)
    m = solve_optimal(build_distance_matrix(ds))
    ms = to_matched_sample(m, ds)
    path = tmp_path / "pairs.csv"
    write_pairs_csv(ms, path, [0.5] * len(ms))
    back = read_pairs_csv(path)
    assert back.pair_ids == ms.pair_ids
    np.testing.assert_array_equal(back.dy_hi, ms.dy_hi)
    np.testing.assert_array_equal(back.x_lo, ms.x_lo)
    assert back.covariate_names == ms.covariate_names


def test_balance_report_fields(rng):
    ds = random_panel(rng, n=20)
    ms = to_matched_sample(solve_optimal(build_distance_matrix(ds)), ds)
    rep = balance_report(ms).to_dict()
    assert rep["n_pairs"] == 10
    assert set(rep["covariates"]) == {"x1", "x2", "x3"}
    assert rep["gap"]["min"] >= 0


def test_matching_improves_balance_over_random_pairs(rng):
    ds = random_panel(rng, n=200)
    ms = to_matched_sample(solve_optimal(build_distance_matrix(ds)), ds)
    matched = np.mean(np.abs(ms.x_hi - ms.x_lo))
    perm = rng.permutation(200)
    X = ds.X
    random = np.mean(np.abs(X[perm[:100]] - X[perm[100:]]))
    assert matched < random
