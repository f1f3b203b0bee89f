import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from crowdplan.lp import INF, LpProblem, LpStatus, farkas_value


def test_single_binding_row():
    lp = LpProblem()
    x = lp.add_column(1.0)
    r = lp.add_row(">=", 3.0, [(x, 1.0)])
    sol = lp.solve()
    assert sol.status is LpStatus.OPTIMAL
    assert sol.value(x) == pytest.approx(3.0)
    assert sol.dual(r) == pytest.approx(1.0)


def test_redundant_row_has_zero_dual():
    lp = LpProblem()
    x = lp.add_column(-1.0, 0.0, INF)
    r1 = lp.add_row("<=", 1.0, [(x, 1.0)])
    r2 = lp.add_row("<=", 2.0, [(x, 1.0)])
    sol = lp.solve()
    assert sol.value(x) == pytest.approx(1.0)
    assert sol.dual(r1) == pytest.approx(-1.0)
    assert sol.dual(r2) == pytest.approx(0.0)


def test_contradictory_rows_give_farkas_ray():
    lp = LpProblem()
    x = lp.add_column(0.0, -INF, INF)
    r1 = lp.add_row(">=", 1.0, [(x, 1.0)])
    r2 = lp.add_row("<=", 0.0, [(x, 1.0)])
    sol = lp.solve()
    assert sol.status is LpStatus.INFEASIBLE
    y = sol.farkas_ray
    # a ">=" row takes a non-negative weight, a "<=" row a non-positive one
    assert sol.ray(r1) > 0 and sol.ray(r2) < 0
    assert sol.ray(r1) == pytest.approx(-sol.ray(r2))
    assert lp.farkas_value(y) > 0


def test_added_cut_raises_objective():
    lp = LpProblem()
    x = lp.add_column(1.0)
    y = lp.add_column(2.0)
    lp.add_row(">=", 1.0, [(x, 1.0), (y, 1.0)])
    before = lp.solve().objective
    lp.add_row(">=", 0.5, [(y, 1.0)])
    after = lp.solve().objective
    assert after >= before - 1e-9
    assert after == pytest.approx(1.5)


def test_added_column_lowers_objective():
    lp = LpProblem()
    x = lp.add_column(3.0)
    r = lp.add_row(">=", 2.0, [(x, 1.0)])
    before = lp.solve()
    # reduced cost of the new column: 1 - dual * 1 < 0
    assert 1.0 - before.dual(r) < 0
    lp.add_column(1.0, entries=[(r, 1.0)])
    after = lp.solve().objective
    assert after < before.objective
    assert after == pytest.approx(2.0)


def test_removing_slack_row_keeps_objective():
    lp = LpProblem()
    x = lp.add_column(1.0)
    lp.add_row(">=", 2.0, [(x, 1.0)])
    slack = lp.add_row("<=", 10.0, [(x, 1.0)])
    before = lp.solve().objective
    lp.remove_rows([slack])
    assert lp.solve().objective == pytest.approx(before)


def test_keys_survive_deletion():
    lp = LpProblem()
    cols = lp.add_columns([1.0, 2.0, 3.0], [0, 0, 0], [5, 5, 5])
    rows = lp.add_rows([">="] * 3, [1.0, 1.0, 1.0], [[(c, 1.0)] for c in cols])
    lp.remove_columns([cols[1]])
    lp.remove_rows([rows[1]])
    sol = lp.solve()
    assert sol.value(cols[0]) == pytest.approx(1.0)
    assert sol.value(cols[2]) == pytest.approx(1.0)
    assert sol.objective == pytest.approx(4.0)
    with pytest.raises(IndexError):
        lp.set_bounds(cols[1], 0, 1)
    assert not sol.has_col(cols[1])


def test_bound_changes():
    lp = LpProblem()
    x = lp.add_column(-1.0, 0.0, 4.0)
    assert lp.solve().value(x) == pytest.approx(4.0)
    lp.set_bounds(x, 0.0, 1.5)
    assert lp.bounds(x) == (0.0, 1.5)
    assert lp.solve().value(x) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        lp.set_bounds(x, 2.0, 1.0)


def test_unknown_sense():
    lp = LpProblem()
    x = lp.add_column(1.0)
    with pytest.raises(ValueError):
        lp.add_row("<>", 1.0, [(x, 1.0)])


def test_farkas_value_rejects_wrong_signs():
    A = np.array([[1.0], [1.0]])
    from scipy import sparse
    A = sparse.csc_matrix(A)
    rl, ru = np.array([1.0, -INF]), np.array([INF, 0.0])
    cl, cu = np.array([-INF]), np.array([INF])
    assert farkas_value(A, cl, cu, rl, ru, np.array([1.0, -1.0])) == pytest.approx(1.0)
    assert farkas_value(A, cl, cu, rl, ru, np.array([-1.0, 1.0])) == -np.inf


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_matches_scipy_linprog(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 7)), int(rng.integers(1, 6))
    A = rng.uniform(-1, 2, size=(m, n))
    b = rng.uniform(-1, 3, size=m)
    c = rng.uniform(0.1, 2, size=n)
    ub = rng.uniform(1, 5, size=n)
    lp = LpProblem()
    cols = lp.add_columns(c, np.zeros(n), ub)
    rows = lp.add_rows([">="] * m, b, [[(cols[j], A[i, j]) for j in range(n)] for i in range(m)])
    sol = lp.solve()
    ref = linprog(c, A_ub=-A, b_ub=-b, bounds=list(zip(np.zeros(n), ub)), method="highs")
    if ref.status == 2:
        assert sol.status is LpStatus.INFEASIBLE
        assert lp.farkas_value(sol.farkas_ray) > 0
        return
    assert sol.status is LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-7)
    # ">=" rows of a minimization carry non-negative duals; complementary slackness
    y = sol.duals(rows)
    assert np.all(y >= -1e-7)
    slack = A @ sol.values(cols) - b
    assert np.all(np.abs(y * slack) <= 1e-6)
