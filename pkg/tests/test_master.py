import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import make_instance, random_micro
from crowdplan.lp import LpStatus
from crowdplan.master import (MasterError, UndefinedCrowding, build_master, initial_routes,
                              true_objective)
from crowdplan.network import ArcKind, CoverageWarning, OdPair, pricing_graph
from crowdplan.orchestrator import Controls, solve_relaxation

A, B, C, D = range(4)


@pytest.fixture
def fig1_ad(fig1):
    return fig1.replace(demand=(OdPair(A, D, 10.0),), gamma=0.05)


def test_model_dimensions(fig1_ad):
    m = build_master(fig1_ad, budget=100.0, eager_arcs=True)
    cgn = fig1_ad.cgn
    assert len(m.routes) == 1
    assert len(m.x_col) == cgn.num_arcs
    assert len(m.theta_col) == 4
    assert len(m.y_col) == 2 and len(m.w_col) == 2
    # budget, coverage per edge, frequency windows, flow links, demand
    assert m.lp.num_rows == 1 + 4 + 2 + 2 + cgn.num_arcs + 1
    route = next(iter(m.routes.routes.values()))[1]
    assert [cgn.arcs[a].line for a in route] == [0, 0, 0, 0]


def test_lazy_arcs_only_on_routes(fig1_ad):
    m = build_master(fig1_ad, budget=100.0)
    assert sorted(m.x_col) == sorted(next(iter(m.routes.routes.values()))[1])
    assert len(m.theta_col) == 2


def test_attach_routes(fig1_ad):
    m = build_master(fig1_ad, budget=100.0)
    routes = list(pricing_graph(fig1_ad.cgn, (A, D)).routes())
    first = next(iter(m.routes.routes.values()))[1]
    other = [r for r in routes if r != first][0]
    col = m.attach_route(0, other)
    assert col is not None
    assert m.routes.count(0) == 2
    assert m.attach_route(0, other) is None
    assert m.routes.count(0) == 2
    with pytest.raises(KeyError):
        m.attach_route(3, other)
    with pytest.raises(MasterError):
        m.attach_route(0, other[1:])


def test_route_column_structure(fig1_ad):
    m = build_master(fig1_ad, budget=100.0)
    col, (od, arcs) = next(iter(m.routes.routes.items()))
    A_, cost = m.lp.arrays()[:2]
    j = m.lp.col_positions([col])[0]
    assert cost[j] == 0.0
    column = A_[:, j].toarray().ravel()
    assert column[m.lp.row_positions([m.demand_row[od]])[0]] == 1.0
    for a in arcs:
        assert column[m.lp.row_positions([m.flow_row[a]])[0]] == -1.0
    assert np.count_nonzero(column) == 1 + len(arcs)


def test_budget_too_small_is_infeasible(fig1_ad):
    # both lines are needed for coverage and each costs 2 at minimum frequency
    m = build_master(fig1_ad, budget=3.0)
    sol = m.solve()
    assert sol.status is LpStatus.INFEASIBLE
    assert m.lp.farkas_value(sol.farkas_ray) > 0
    assert sol.ray(m.budget_row) < 0


def test_zero_crowding_keeps_theta_zero(fig1):
    inst = fig1.replace(gamma=0.0)
    m, sol, rep = solve_relaxation(inst, Controls(stagnation=False), budget=100.0)
    assert np.allclose(m.theta(sol), 0.0)
    assert rep.cuts_added == 0


def test_missing_route_rejected(fig1_ad):
    with pytest.raises(MasterError):
        build_master(fig1_ad, budget=100.0, routes=[])


def test_initial_routes_are_cheapest(fig1):
    routes = initial_routes(fig1)
    assert [fig1.cgn.cost[list(r)].sum() for r in routes] == [7.0, 10.0]


def _one_arc():
    inst = make_instance(2, [(0, 1, 5.0)], [((0, 1), 1.0, 1.0, 1.0, 5.0)], [(0, 1, 10.0)],
                         dwell=0.0, gamma=0.05)
    x = np.zeros(inst.cgn.num_arcs)
    x[0] = 10.0
    return inst, x


def test_true_objective_substitution():
    inst, x = _one_arc()
    assert true_objective(inst.cgn, x, [2.0]) == pytest.approx((52.5, 50.0, 2.5))


def test_true_objective_zero_flow():
    inst, x = _one_arc()
    assert true_objective(inst.cgn, np.zeros_like(x), [0.0]) == (0.0, 0.0, 0.0)


def test_true_objective_without_crowding():
    inst, x = _one_arc()
    perceived, travel, crowd = true_objective(inst.replace(gamma=0.0).cgn, x, [2.0])
    assert perceived == travel == 50.0 and crowd == 0.0


def test_true_objective_undefined():
    inst, x = _one_arc()
    with pytest.raises(UndefinedCrowding):
        true_objective(inst.cgn, x, [0.0])


def test_blocked_route_removed_and_reseeded(fig1_ad):
    m = build_master(fig1_ad, budget=100.0)
    m.fix_line(0, 0, reseed=True)
    # every route A -> D needs line 0's C -> D arc
    assert m.routes.count(0) == 0
    assert m.solve().status is LpStatus.INFEASIBLE


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_relaxation_invariants(seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        inst = random_micro(seed)
    m, sol, rep = solve_relaxation(inst, Controls(stagnation=False))
    assert sol.status is LpStatus.OPTIMAL
    x = m.arc_flows(sol)
    z = m.route_flows(sol)
    # flow conservation and demand satisfaction
    agg = np.zeros_like(x)
    per_od = np.zeros(len(m.ods))
    for col, f in z.items():
        od, arcs = m.routes.routes[col]
        agg[list(arcs)] += f
        per_od[od] += f
    assert np.allclose(agg, x, atol=1e-6)
    assert np.allclose(per_od, m.demand, atol=1e-6)
    # outer approximation under-estimates the crowding term
    perceived = m.evaluate_true_objective(sol)[0]
    assert m.lp_objective(sol) <= perceived + 1e-6 * max(1.0, perceived)
    # frequency windows of the relaxation
    y, w = m.y(sol), m.w(sol)
    assert np.all(y >= m.f_min * w - 1e-7) and np.all(y <= m.f_max * w + 1e-7)
    assert np.all(x[inst.cgn.kind == ArcKind.TRAVEL] >= -1e-9)
