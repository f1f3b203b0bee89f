"""Restricted master problem with relaxed line selection and outer-approximated crowding.

Variables: frequency ``y`` and selection ``w`` per line, flow ``x`` per CGN arc,
crowding epigraph ``theta`` per travel arc and one flow column ``z`` per route.
The objective is ``sum c x + sum theta``; each ``theta`` is pushed up to
``gamma x^2 / y`` by tangent cuts from :mod:`crowdplan.cuts`.

Arc variables and their flow-link rows are created when a route first uses the
arc. Pricing treats a missing arc as if it carried dual ``c_a``, which is a
valid dual value for the row it would bring along.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cuts import CutPool
from .lp import INF, LpProblem, LpSolution, LpStatus
from .network import ArcKind, Instance, is_valid_route
from .pricing import DualMode, DualSnapshot, shortest_routes


class MasterError(RuntimeError):
    pass


class UndefinedCrowding(ValueError):
    """Flow on a travel arc whose line has zero frequency."""


@dataclass
class RoutePool:
    """Route columns currently in the master, indexed by OD pair and by arc."""
    num_ods: int
    by_od: list[dict] = field(default_factory=list)  # arcs tuple -> z column
    routes: dict[int, tuple[int, tuple[int, ...]]] = field(default_factory=dict)  # col -> (od, arcs)
    by_arc: dict[int, set] = field(default_factory=dict)

    def __post_init__(self):
        if not self.by_od:
            self.by_od = [dict() for _ in range(self.num_ods)]

    def has(self, od: int, arcs: tuple[int, ...]) -> bool:
        return arcs in self.by_od[od]

    def add(self, col: int, od: int, arcs: tuple[int, ...]) -> None:
        self.by_od[od][arcs] = col
        self.routes[col] = (od, arcs)
        for a in arcs:
            self.by_arc.setdefault(a, set()).add(col)

    def remove(self, col: int) -> None:
        od, arcs = self.routes.pop(col)
        del self.by_od[od][arcs]
        for a in arcs:
            self.by_arc[a].discard(col)

    def count(self, od: int) -> int:
        return len(self.by_od[od])

    def __len__(self) -> int:
        return len(self.routes)

    @property
    def average_per_od(self) -> float:
        return len(self.routes) / max(1, self.num_ods)


@dataclass
class LinePlan:
    w: np.ndarray
    y: np.ndarray
    travel_time: float = float("nan")
    crowding: float = float("nan")
    transfers: float = float("nan")

    @property
    def perceived(self) -> float:
        return self.travel_time + self.crowding

    @property
    def open_lines(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.w > 0.5)]

    def to_dict(self) -> dict:
        return {"w": [int(round(v)) for v in self.w], "y": [float(v) for v in self.y],
                "open_lines": self.open_lines,
                "objective": {"perceived": self.perceived, "travel_time": self.travel_time,
                              "crowding": self.crowding, "transfers": self.transfers}}


def true_objective(cgn, x: np.ndarray, y_line: np.ndarray, tol: float = 1e-7):
    """Exact ``(perceived, travel, crowding)`` of arc flows under line frequencies."""
    x = np.asarray(x, dtype=float)
    travel = float(cgn.cost @ x)
    ta = cgn.travel_arcs
    xt = x[ta]
    g = cgn.gamma[ta]
    yt = np.asarray(y_line, dtype=float)[cgn.line[ta]]
    used = (xt > tol) & (g > 0)
    bad = used & (yt <= 0)
    if np.any(bad):
        arcs = ta[bad][:5].tolist()
        raise UndefinedCrowding(f"flow on travel arcs {arcs} of lines with zero frequency")
    crowd = float(np.sum(g[used] * xt[used] ** 2 / yt[used]))
    return travel + crowd, travel, crowd


class MasterModel:
    """The LP relaxation over a restricted route set, kept alive across rounds."""

    def __init__(self, instance: Instance, budget: float | None = None, cost_weight: float = 1e-6,
                 tol_violation: float = 1e-5, tol_slack: float = 1e-6, eps: float = 1e-6,
                 eager_arcs: bool = False, lp_tol: float = 1e-7):
        from .instances import surrogate_baseline_budget

        self.instance = instance
        self.cgn = cgn = instance.cgn
        self.ods = [(od.origin, od.destination) for od in instance.demand]
        self.demand = np.array([od.demand for od in instance.demand], dtype=float)
        if budget is None:
            budget = instance.params.budget
        if budget is None:
            budget = surrogate_baseline_budget(instance)
        self.budget = float(budget)
        self.cost_weight = float(cost_weight)
        pool = instance.pool
        self.d = np.array([ln.op_cost for ln in pool], dtype=float)
        self.e = np.array([ln.setup_cost for ln in pool], dtype=float)
        self.f_min = np.array([ln.f_min for ln in pool], dtype=float)
        self.f_max = np.array([ln.f_max for ln in pool], dtype=float)
        L = len(pool)

        self.lp = lp = LpProblem(feasibility_tol=lp_tol, optimality_tol=lp_tol)
        # keep tangent slopes bounded: no plausible load per unit frequency exceeds this
        f_floor = max(float(np.min([l.f_min for l in instance.pool.lines])), 0.1)
        cap = max(instance.total_demand, 1.0) / f_floor
        self.cuts = CutPool(lp, tol_violation=tol_violation, tol_slack=tol_slack, eps=eps,
                            ratio_cap=cap)
        self.y_col = lp.add_columns(self.cost_weight * self.d, np.zeros(L), self.f_max)
        self.w_col = lp.add_columns(self.cost_weight * self.e, np.zeros(L), np.ones(L))

        self.budget_row = lp.add_row("<=", self.budget,
                                     [(c, v) for c, v in zip(self.y_col, self.d)]
                                     + [(c, v) for c, v in zip(self.w_col, self.e)])
        exempt = set(instance.params.coverage_exempt)
        per_edge = pool.lines_on_edge(instance.ptn)
        self.cover_rows: dict[int, int] = {}
        cov = [(e, ls) for e, ls in enumerate(per_edge) if e not in exempt]
        keys = lp.add_rows([">="] * len(cov), [1.0] * len(cov),
                           [[(self.w_col[l], 1.0) for l in ls] for _, ls in cov])
        self.cover_rows = {e: k for (e, _), k in zip(cov, keys)}
        self.freq_lo_row = lp.add_rows([">="] * L, [0.0] * L,
                                       [[(self.y_col[l], 1.0), (self.w_col[l], -self.f_min[l])]
                                        for l in range(L)])
        self.freq_hi_row = lp.add_rows(["<="] * L, [0.0] * L,
                                       [[(self.y_col[l], 1.0), (self.w_col[l], -self.f_max[l])]
                                        for l in range(L)])
        self.demand_row = lp.add_rows(["="] * len(self.ods), self.demand, [[] for _ in self.ods])

        self.x_col: dict[int, int] = {}
        self.flow_row: dict[int, int] = {}
        self.theta_col: dict[int, int] = {}
        self.blocked = np.zeros(cgn.num_arcs, dtype=bool)
        self.routes = RoutePool(len(self.ods))
        self.last: LpSolution | None = None
        if eager_arcs:
            self.ensure_arcs(range(cgn.num_arcs))

    # structure
    def ensure_arcs(self, arcs: Sequence[int]) -> None:
        new = sorted({int(a) for a in arcs if a not in self.x_col})
        if not new:
            return
        cgn, lp = self.cgn, self.lp
        ub = np.where(self.blocked[new], 0.0, INF)
        xs = lp.add_columns(cgn.cost[new], np.zeros(len(new)), ub)
        rows = lp.add_rows(["="] * len(new), [0.0] * len(new), [[(x, 1.0)] for x in xs], satisfied=True)
        for a, x, r in zip(new, xs, rows):
            self.x_col[a] = x
            self.flow_row[a] = r
        travel = [a for a in new if cgn.kind[a] == ArcKind.TRAVEL]
        if travel:
            ths = lp.add_columns(np.ones(len(travel)), np.zeros(len(travel)), np.full(len(travel), INF))
            for a, t in zip(travel, ths):
                self.theta_col[a] = t
                if cgn.gamma[a] > 0:
                    self.cuts.register(a, t, self.x_col[a], self.y_col[cgn.line[a]], cgn.gamma[a])

    def attach_route(self, od: int, route: Sequence[int]) -> int | None:
        """Add a route column for OD ``od``; ``None`` if the route is already present."""
        return self.attach_routes([(od, route)])[0]

    def attach_routes(self, items: Sequence[tuple[int, Sequence[int]]]) -> list[int | None]:
        todo, out_idx = [], []
        seen = set()
        for i, (od, route) in enumerate(items):
            if not (0 <= od < len(self.ods)):
                raise KeyError(f"unknown OD index {od}")
            route = tuple(int(a) for a in route)
            if not is_valid_route(self.cgn, self.ods[od], route):
                raise MasterError(f"route {route} is not a simple route for OD {self.ods[od]}")
            if self.routes.has(od, route) or (od, route) in seen:
                continue
            if np.any(self.blocked[list(route)]):
                raise MasterError(f"route for OD {self.ods[od]} uses a closed line")
            seen.add((od, route))
            todo.append((od, route))
            out_idx.append(i)
        out: list[int | None] = [None] * len(items)
        if not todo:
            return out
        self.ensure_arcs([a for _, r in todo for a in r])
        entries = [[(self.demand_row[od], 1.0)] + [(self.flow_row[a], -1.0) for a in r]
                   for od, r in todo]
        cols = self.lp.add_columns(np.zeros(len(todo)), np.zeros(len(todo)),
                                   np.full(len(todo), INF), entries)
        for i, col, (od, r) in zip(out_idx, cols, todo):
            self.routes.add(col, od, r)
            out[i] = col
        return out

    def remove_routes(self, cols: Sequence[int]) -> None:
        self.lp.remove_columns(list(cols))
        for c in cols:
            self.routes.remove(c)

    def fix_line(self, line: int, value: int, reseed: bool = True) -> None:
        """Fix ``w`` of a line to 1, or close the line (``w = y = 0``, arcs blocked)."""
        if value == 1:
            self.lp.set_bounds(self.w_col[line], 1.0, 1.0)
            return
        if value != 0:
            raise ValueError("lines are fixed to 0 or 1")
        self.lp.set_bounds(self.w_col[line], 0.0, 0.0)
        self.lp.set_bounds(self.y_col[line], 0.0, 0.0)
        self.block_arcs(self.cgn.arcs_of_lines([line]), drop_routes=True, reseed=reseed)

    def block_arcs(self, arcs: Sequence[int], drop_routes: bool = True, reseed: bool = False) -> None:
        """Force flow on ``arcs`` to zero and keep pricing away from them.

        With ``drop_routes`` the route columns through these arcs are deleted;
        ``reseed`` then gives every OD left without a route its cheapest
        remaining route.
        """
        arcs = np.asarray(arcs, dtype=np.int64)
        self.blocked[arcs] = True
        for a in arcs:
            if int(a) in self.x_col:
                self.lp.set_bounds(self.x_col[int(a)], 0.0, 0.0)
        if not drop_routes:
            return
        dead = sorted({c for a in arcs for c in self.routes.by_arc.get(int(a), ())})
        self.remove_routes(dead)
        if reseed:
            empty = [p for p in range(len(self.ods)) if self.routes.count(p) == 0]
            if empty:
                found = shortest_routes(self.cgn, [self.ods[p] for p in empty], self.cgn.cost,
                                        self.blocked)
                self.attach_routes([(p, r) for p, (r, _) in zip(empty, found) if r is not None])

    def set_budget(self, budget: float) -> None:
        self.budget = float(budget)
        self.lp.set_rhs(self.budget_row, "<=", self.budget)

    # solving and reading
    def solve(self) -> LpSolution:
        sol = self.lp.solve()
        self.last = sol
        return sol

    def y(self, sol: LpSolution) -> np.ndarray:
        return sol.values(self.y_col)

    def w(self, sol: LpSolution) -> np.ndarray:
        return sol.values(self.w_col)

    def arc_flows(self, sol: LpSolution) -> np.ndarray:
        x = np.zeros(self.cgn.num_arcs)
        if self.x_col:
            arcs = list(self.x_col)
            x[arcs] = sol.values([self.x_col[a] for a in arcs], missing=0.0)
        return x

    def theta(self, sol: LpSolution) -> np.ndarray:
        th = np.zeros(self.cgn.num_arcs)
        if self.theta_col:
            arcs = list(self.theta_col)
            th[arcs] = sol.values([self.theta_col[a] for a in arcs], missing=0.0)
        return th

    def route_flows(self, sol: LpSolution) -> dict[int, float]:
        cols = list(self.routes.routes)
        return dict(zip(cols, sol.values(cols, missing=0.0).tolist()))

    def lp_objective(self, sol: LpSolution) -> float:
        """``sum c x + sum theta`` at the solution, excluding the line-cost tie-break term."""
        return float(self.cgn.cost @ self.arc_flows(sol) + self.theta(sol).sum())

    def lower_bound(self, sol: LpSolution) -> float:
        """Valid lower bound on the relaxation optimum of ``sum c x + sum theta``."""
        return float(sol.objective - self.cost_weight * self.budget)

    def evaluate_true_objective(self, sol: LpSolution, tol: float = 1e-7):
        return true_objective(self.cgn, self.arc_flows(sol), self.y(sol), tol)

    def dual_snapshot(self, sol: LpSolution) -> DualSnapshot:
        cgn = self.cgn
        if sol.status is LpStatus.OPTIMAL:
            arc = cgn.cost.copy()
            if self.x_col:
                arcs = list(self.x_col)
                xs = [self.x_col[a] for a in arcs]
                arc[arcs] = sol.duals([self.flow_row[a] for a in arcs]) + sol.rcs(xs)
            od = sol.duals(self.demand_row)
            return DualSnapshot(arc, od, DualMode.OPTIMAL, self.blocked.copy())
        if sol.status is LpStatus.INFEASIBLE:
            arc = np.zeros(cgn.num_arcs)
            ray = sol.farkas_ray
            if self.x_col:
                A = self.lp.arrays()[0]
                arcs = list(self.x_col)
                g = A.T @ ray
                gx = g[self.lp.col_positions([self.x_col[a] for a in arcs])]
                fr = ray[self.lp.row_positions([self.flow_row[a] for a in arcs])]
                arc[arcs] = fr - np.minimum(gx, 0.0)
            od = sol.rays(self.demand_row)
            return DualSnapshot(arc, od, DualMode.FARKAS, self.blocked.copy())
        raise MasterError(f"no duals for LP status {sol.status.value}")

    def plan(self, sol: LpSolution, integral: bool = True) -> LinePlan:
        y = self.y(sol)
        w = self.w(sol)
        if integral:
            w = (w > 0.5).astype(int)
            y = np.where(w > 0, y, 0.0)
        x = self.arc_flows(sol)
        perceived, travel, crowd = true_objective(self.cgn, x, y)
        transfers = float(x[self.cgn.kind == ArcKind.TRANSFER].sum())
        return LinePlan(w, y, travel, crowd, transfers)


def initial_routes(instance: Instance, blocked: np.ndarray | None = None) -> list[tuple[int, ...]]:
    """Cheapest route (by base arc cost) for every OD pair."""
    cgn = instance.cgn
    ods = [(od.origin, od.destination) for od in instance.demand]
    found = shortest_routes(cgn, ods, cgn.cost, blocked)
    missing = [ods[p] for p, (r, _) in enumerate(found) if r is None]
    if missing:
        raise MasterError(f"OD pairs without any route in the CGN: {missing[:10]}")
    return [r for r, _ in found]


def build_master(instance: Instance, budget: float | None = None,
                 routes: Sequence[Sequence[int]] | None = None, **kwargs) -> MasterModel:
    m = MasterModel(instance, budget, **kwargs)
    if routes is None:
        routes = initial_routes(instance)
    if len(routes) != len(m.ods):
        raise MasterError("one initial route per OD pair is required")
    m.attach_routes(list(enumerate(routes)))
    return m
