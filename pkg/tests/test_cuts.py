import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from crowdplan.cuts import (CutPool, cone_violation, find_violations, make_cut, relative_violation,
                            retire_slack_cuts)
from crowdplan.lp import INF, LpProblem


def test_violated_point_reported():
    idx, xh, yh = find_violations([10.0], [2.0], [0.0], [0.05])
    assert list(idx) == [0]
    assert cone_violation(10.0, 2.0, 0.0, 0.05) == pytest.approx(5.0)
    assert (xh[0], yh[0]) == (10.0, 2.0)


def test_boundary_point_not_reported():
    idx, _, _ = find_violations([10.0], [2.0], [2.5], [0.05])
    assert len(idx) == 0
    assert cone_violation(10.0, 2.0, 2.5, 0.05) == pytest.approx(0.0)


def test_origin_not_reported():
    idx, _, _ = find_violations([0.0], [0.0], [0.0], [0.05])
    assert len(idx) == 0


def test_cut_coefficients_and_tangency():
    cut = make_cut(0, 10.0, 2.0, 0.05)
    assert cut.x_coef == pytest.approx(0.5)
    assert cut.y_coef == pytest.approx(1.25)
    assert cut.bound(10.0, 2.0) == pytest.approx(2.5)
    assert cut.bound(10.0, 2.0) == pytest.approx(0.05 * 100 / 2)


def test_zero_anchor_cut_is_trivial_and_skipped():
    cut = make_cut(0, 0.0, 1.0, 0.05)
    assert cut.x_coef == 0.0 and cut.y_coef == 0.0
    # x = 0 never yields a cut
    idx, _, _ = find_violations([0.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.05, 0.05])
    assert len(idx) == 0


def test_make_cut_rejects_bad_anchor():
    with pytest.raises(ValueError):
        make_cut(0, 1.0, 0.0, 0.05)
    with pytest.raises(ValueError):
        make_cut(0, 1.0, 1.0, -0.1)


def test_zero_frequency_is_anchored_at_eps():
    idx, xh, yh = find_violations([3.0], [0.0], [0.0], [0.1], eps=1e-6)
    assert list(idx) == [0]
    assert yh[0] > 0


def test_ratio_cap_bounds_slopes():
    idx, xh, yh = find_violations([50.0], [0.0], [0.0], [0.1], eps=1e-9, ratio_cap=10.0)
    assert list(idx) == [0]
    assert xh[0] / yh[0] == pytest.approx(10.0)
    cut = make_cut(0, xh[0], yh[0], 0.1)
    assert cut.bound(50.0, 0.0) > 0.0


@settings(max_examples=300, deadline=None)
@given(xh=st.floats(0, 100), yh=st.floats(1e-3, 5), g=st.floats(1e-3, 1),
       x=st.floats(0, 100), y=st.floats(1e-3, 5))
def test_cut_is_valid_on_the_cone(xh, yh, g, x, y):
    cut = make_cut(0, xh, yh, g)
    theta = g * x * x / y
    assert cut.bound(x, y) <= theta + 1e-9 * max(1.0, theta)
    assert cut.bound(xh, yh) == pytest.approx(g * xh * xh / yh, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(1e-3, 100), y=st.floats(0, 5), frac=st.floats(0, 0.99), g=st.floats(1e-3, 1))
def test_returned_anchor_separates_the_point(x, y, frac, g):
    q = g * x * x
    theta = frac * q / max(y, 1e-3)
    assume(q - theta * y > 1e-5 * max(1.0, q))
    idx, xh, yh = find_violations([x], [y], [theta], [g], tol=1e-5, ratio_cap=1e4)
    for k in range(len(idx)):
        assert make_cut(0, xh[k], yh[k], g).bound(x, y) > theta


def test_relative_violation_is_scaled():
    assert relative_violation(10.0, 2.0, 0.0, 0.05) == pytest.approx(1.0)
    assert relative_violation(10.0, 2.0, 5.0, 0.05) == 0.0


def _single_cone_lp(gamma=0.05, load=10.0):
    """min theta + y with x fixed: optimum y = sqrt(gamma) * load."""
    lp = LpProblem()
    x = lp.add_column(0.0, load, load)
    y = lp.add_column(1.0, 0.0, 5.0)
    th = lp.add_column(1.0, 0.0, INF)
    pool = CutPool(lp, tol_violation=1e-9)
    pool.register(0, th, x, y, gamma)
    return lp, pool, (x, y, th)


def test_fresh_cut_is_tight_and_kept():
    lp, pool, (x, y, th) = _single_cone_lp()
    sol = lp.solve()
    cuts = pool.separate(sol)
    assert len(cuts) == 1
    sol = lp.solve()
    assert sol.activity(cuts[0].row) == pytest.approx(0.0, abs=1e-9)
    assert pool.retire_slack(sol) == 0
    assert len(pool) == 1


def test_cut_loop_converges_and_retires_far_cuts():
    lp, pool, (x, y, th) = _single_cone_lp()
    first = None
    for _ in range(100):
        sol = lp.solve()
        new = pool.separate(sol)
        first = first or new[0]
        if not new:
            break
    assert sol.value(y) == pytest.approx(np.sqrt(0.05) * 10.0, rel=1e-4)
    assert sol.objective == pytest.approx(2 * np.sqrt(0.05) * 10.0, rel=1e-6)
    # the first cut was anchored far from the optimum and is slack there
    assert sol.activity(first.row) > 1e-3
    removed = retire_slack_cuts(pool, sol, tol_slack=1e-6)
    assert removed >= 1
    assert first.row not in pool.active
    assert lp.solve().objective == pytest.approx(sol.objective, rel=1e-9)


def test_retire_with_no_cuts():
    lp, pool, _ = _single_cone_lp()
    assert pool.retire_slack(lp.solve()) == 0


def test_underestimate_and_total_tolerance():
    lp, pool, (x, y, th) = _single_cone_lp()
    sol = lp.solve()
    assert pool.underestimate(sol) == np.inf
    pool.separate(sol)
    sol = lp.solve()
    under = pool.underestimate(sol)
    assert under == pytest.approx(0.05 * 100 / sol.value(y) - sol.value(th))
    pool.tol_total = 1.0
    assert pool.separate(sol, scale=2 * under) == []
    assert len(pool.separate(sol, scale=0.5 * under)) == 1
