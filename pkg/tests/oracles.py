"""Reference solutions built independently of the column generation code."""
import itertools

import cvxpy as cp
import numpy as np

from crowdplan.master import build_master
from crowdplan.network import pricing_graph
from crowdplan.orchestrator import Controls, colgen_phase


def all_routes(instance):
    """Every simple route of every OD pair, by explicit enumeration."""
    cgn = instance.cgn
    return [list(pricing_graph(cgn, (od.origin, od.destination)).routes()) for od in instance.demand]


def socp_relaxation(instance, budget):
    """Continuous relaxation over all routes with the exact cone, solved by an interior point method.

    Returns ``(objective, y, w)``; the objective is ``sum c x + sum gamma x^2 / y``.
    """
    cgn = instance.cgn
    pool = instance.pool
    L = len(pool)
    routes = all_routes(instance)
    z = [cp.Variable(len(rs), nonneg=True) for rs in routes]
    y = cp.Variable(L, nonneg=True)
    w = cp.Variable(L)
    x = [0] * cgn.num_arcs
    for zs, rs in zip(z, routes):
        for k, r in enumerate(rs):
            for a in r:
                x[a] = x[a] + zs[k]
    d = np.array([ln.op_cost for ln in pool])
    e = np.array([ln.setup_cost for ln in pool])
    cons = [w >= 0, w <= 1, d @ y + e @ w <= budget]
    cons += [cp.sum(zs) == od.demand for zs, od in zip(z, instance.demand)]
    for l, ln in enumerate(pool):
        cons += [y[l] >= ln.f_min * w[l], y[l] <= ln.f_max * w[l]]
    for lines in pool.lines_on_edge(instance.ptn):
        cons.append(sum(w[l] for l in lines) >= 1)
    obj = 0
    for a in range(cgn.num_arcs):
        if isinstance(x[a], int):
            continue
        obj = obj + cgn.cost[a] * x[a]
        if cgn.gamma[a] > 0:
            obj = obj + cgn.gamma[a] * cp.quad_over_lin(x[a], y[cgn.line[a]])
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    assert prob.status == cp.OPTIMAL, prob.status
    return float(prob.value), np.asarray(y.value), np.asarray(w.value)


def all_routes_lp(instance, budget, tol_violation=1e-9):
    """LP outer approximation with every enumerated route present from the start.

    Only the cut loop runs: pricing can find nothing because no route is missing.
    """
    routes = all_routes(instance)
    m = build_master(instance, budget, routes=[rs[0] for rs in routes],
                     tol_violation=tol_violation)
    m.attach_routes([(p, r) for p, rs in enumerate(routes) for r in rs[1:]])
    res, sol = colgen_phase(m, Controls(stagnation=False, delta1=np.inf,
                                        tol_violation=tol_violation))
    assert res.status == "converged"
    assert m.routes.count(0) == len(routes[0])
    return m, sol


def check_plan(instance, budget, w, y, tol=1e-6):
    """Budget, edge coverage and frequency windows of an integral plan; returns the failures."""
    pool = instance.pool
    w = np.asarray(w)
    y = np.asarray(y, dtype=float)
    bad = []
    if not np.all((w == 0) | (w == 1)):
        bad.append("w not integral")
    cost = sum(ln.setup_cost * w[l] + ln.op_cost * y[l] for l, ln in enumerate(pool))
    if cost > budget * (1 + tol) + tol:
        bad.append(f"budget {cost} > {budget}")
    exempt = set(instance.params.coverage_exempt)
    for e, lines in enumerate(pool.lines_on_edge(instance.ptn)):
        if e not in exempt and not any(w[l] for l in lines):
            bad.append(f"edge {e} uncovered")
    for l, ln in enumerate(pool):
        if y[l] < ln.f_min * w[l] - tol or y[l] > ln.f_max * w[l] + tol:
            bad.append(f"line {l} frequency {y[l]} outside window")
    return bad


def feasible_subsets(instance, budget):
    """Line subsets that cover every edge and fit the budget at minimum frequency."""
    pool = instance.pool
    per_edge = pool.lines_on_edge(instance.ptn)
    out = []
    for k in range(1, len(pool) + 1):
        for sub in itertools.combinations(range(len(pool)), k):
            s = set(sub)
            if all(s & set(ls) for ls in per_edge) and \
                    sum(pool[l].min_cost for l in sub) <= budget + 1e-9:
                out.append(sub)
    return out
