import numpy as np
import pytest

from weakkam.errors import InfeasibleLP, UnboundedLP
from weakkam.simplex import solve_lp

from helpers import brute_force_lp


def test_two_variable_toy():
    # min x1 s.t. x1 + x2 = 1
    sol = solve_lp([1.0, 0.0], [[1.0, 1.0]], [1.0])
    np.testing.assert_allclose(sol.x, [0.0, 1.0], atol=1e-12)
    assert sol.objective == pytest.approx(0.0, abs=1e-12)


def test_degenerate_ties_are_deterministic():
    # two symmetric optima; Bland-style lowest-index tie-breaking picks one
    c = [1.0, 1.0, 0.0]
    A = [[1.0, -1.0, 0.0], [1.0, 1.0, 1.0]]
    b = [0.0, 2.0]
    sols = [solve_lp(c, A, b) for _ in range(3)]
    for s in sols[1:]:
        np.testing.assert_array_equal(sols[0].x, s.x)
    assert sols[0].objective == pytest.approx(0.0, abs=1e-9)


def test_infeasible():
    with pytest.raises(InfeasibleLP):
        solve_lp([1.0], [[1.0], [1.0]], [1.0, 2.0])


def test_unbounded():
    # min -x1 with x1 - x2 = 0: the ray (t, t) is improving and feasible
    with pytest.raises(UnboundedLP):
        solve_lp([-1.0, 0.0], [[1.0, -1.0]], [0.0])


def test_redundant_rows_are_dropped():
    A = [[1.0, 1.0], [2.0, 2.0]]
    sol = solve_lp([1.0, 2.0], A, [1.0, 2.0])
    assert sol.dropped_rows == [1]
    assert sol.objective == pytest.approx(1.0)


def test_duals_certify_optimality():
    rng = np.random.default_rng(5)
    m, n = 4, 9
    A = rng.normal(size=(m, n))
    x_feas = rng.uniform(0.5, 1.0, size=n)
    b = A @ x_feas
    c = rng.normal(size=n)
    sol = solve_lp(c, A, b)
    reduced = c - sol.duals @ A
    assert float(np.min(reduced)) >= -1e-7
    # complementary slackness: basic variables have zero reduced cost
    assert np.max(np.abs(reduced[sol.x > 1e-9])) <= 1e-7


@pytest.mark.parametrize("seed", range(8))
def test_random_lps_match_basis_enumeration(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, 4), rng.integers(4, 7)
    A = rng.normal(size=(m, n)).round(2)
    x_feas = rng.uniform(0.1, 1.0, size=n).round(2)
    b = A @ x_feas                     # feasible by construction
    c = rng.uniform(0.0, 2.0, size=n).round(2)  # bounded: c >= 0 on x >= 0
    sol = solve_lp(c, A, b)
    assert sol.objective == pytest.approx(brute_force_lp(c, A, b), abs=1e-7)


def test_warm_start_reuses_basis():
    rng = np.random.default_rng(11)
    m, n = 5, 20
    A = rng.normal(size=(m, n))
    b = A @ rng.uniform(0.5, 1.0, size=n)
    c1 = rng.uniform(0.0, 1.0, size=n)
    first = solve_lp(c1, A, b)
    c2 = c1 + 0.01 * rng.uniform(size=n)
    warm = solve_lp(c2, A, b, basis0=first.basis)
    cold = solve_lp(c2, A, b)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-8)
    assert warm.iterations <= cold.iterations
