"""User equilibrium routing over a fixed line plan.

With frequencies fixed, a travel arc has the affine link cost
``c_a + (gamma_a / y_l) x_a`` and every other arc keeps its constant cost. The
equilibrium flows minimize the Beckmann potential

    sum_a c_a x_a + sum_a gamma_a x_a^2 / (2 y_l),

which is strictly convex in the flow of every crowded arc. It is minimized by
Frank-Wolfe (all-or-nothing assignment plus an exact quadratic line search);
if that has not reached the gap target after ``fw_iterations`` steps, the
route sets it collected are equilibrated pairwise per OD, again with exact
steps. Both stages only ever decrease the potential.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .master import LinePlan, true_objective
from .network import Instance
from .pricing import shortest_routes

log = logging.getLogger(__name__)


class UeError(ValueError):
    """The plan leaves some OD pairs without a route; ``ods`` lists them."""

    def __init__(self, message: str, ods: list[tuple[int, int]] | None = None):
        super().__init__(message)
        self.ods = ods or []


@dataclass
class UeProblem:
    """Affine link costs ``cost + slope * x`` on the arcs that are not ``blocked``."""
    instance: Instance
    y: np.ndarray
    cost: np.ndarray
    slope: np.ndarray
    blocked: np.ndarray

    @classmethod
    def from_plan(cls, instance: Instance, y, tol: float = 1e-9) -> "UeProblem":
        cgn = instance.cgn
        y = np.asarray(y, dtype=float)
        if len(y) != cgn.num_lines:
            raise ValueError(f"plan has {len(y)} frequencies, pool has {cgn.num_lines} lines")
        closed = [l for l in range(len(y)) if y[l] <= tol]
        blocked = np.zeros(cgn.num_arcs, dtype=bool)
        if closed:
            blocked[cgn.arcs_of_lines(closed)] = True
        slope = np.zeros(cgn.num_arcs)
        ta = cgn.travel_arcs
        open_ta = ta[~blocked[ta]]
        slope[open_ta] = cgn.gamma[open_ta] / y[cgn.line[open_ta]]
        return cls(instance, y, cgn.cost.astype(float), slope, blocked)

    def link_cost(self, x: np.ndarray) -> np.ndarray:
        return self.cost + self.slope * x

    def beckmann(self, x: np.ndarray) -> float:
        return float(self.cost @ x + 0.5 * self.slope @ (x * x))

    def system_cost(self, x: np.ndarray) -> float:
        return float(self.cost @ x + self.slope @ (x * x))


@dataclass
class UeResult:
    x: np.ndarray
    z: dict  # (od index, route arcs) -> flow
    beckmann: float
    tau: np.ndarray  # per-OD equilibrium (shortest route) cost
    gap: float
    system_cost: float
    y: np.ndarray
    gap_trajectory: list[float] = field(default_factory=list)
    beckmann_trajectory: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def route_cost(self, problem: UeProblem, route) -> float:
        return float(problem.link_cost(self.x)[list(route)].sum())

    def to_dict(self, instance: Instance | None = None) -> dict:
        ods = [(o.origin, o.destination) for o in instance.demand] if instance else None
        return {
            "beckmann": self.beckmann,
            "system_cost": self.system_cost,
            "gap": self.gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "y": [float(v) for v in self.y],
            "tau": [float(v) for v in self.tau],
            "gap_trajectory": [float(v) for v in self.gap_trajectory],
            "beckmann_trajectory": [float(v) for v in self.beckmann_trajectory],
            "arc_flows": {str(a): float(v) for a, v in enumerate(self.x) if v > 1e-9},
            "route_flows": [{"od": list(ods[p]) if ods else p, "arcs": list(r), "flow": f}
                            for (p, r), f in sorted(self.z.items()) if f > 1e-9],
        }


def _assign(problem: UeProblem, ods, demand, x):
    """All-or-nothing loading at the link costs of ``x``; returns flows, routes and tau."""
    cgn = problem.instance.cgn
    found = shortest_routes(cgn, ods, problem.link_cost(x), problem.blocked)
    missing = [ods[p] for p, (r, _) in enumerate(found) if r is None]
    if missing:
        raise UeError(f"{len(missing)} OD pairs have no route over the open lines", missing)
    aon = np.zeros(cgn.num_arcs)
    routes = []
    tau = np.empty(len(ods))
    for p, (r, dist) in enumerate(found):
        aon[list(r)] += demand[p]
        routes.append(r)
        tau[p] = dist
    return aon, routes, tau


def _relative_gap(problem: UeProblem, x, tau, demand) -> float:
    current = float(problem.link_cost(x) @ x)
    best = float(demand @ tau)
    return (current - best) / max(abs(current), 1e-12)


def _equilibrate(problem: UeProblem, x, z_by_od, demand, sweeps: int, tol: float,
                 atol: float = 0.0):
    """Shift flow from each OD's dearest used route to its cheapest one, with exact steps.

    A pair of routes counts as balanced once their costs differ by at most
    ``max(atol, tol * max(1, cheapest cost))``.
    """
    for _ in range(sweeps):
        moved = 0.0
        for p, routes in enumerate(z_by_od):
            if len(routes) < 2:
                continue
            for _ in range(len(routes)):
                d = problem.link_cost(x)
                cost = {r: float(d[list(r)].sum()) for r in routes}
                cheap = min(cost, key=cost.get)
                used = [r for r, f in routes.items() if f > 0]
                dear = max(used, key=cost.get)
                diff = cost[dear] - cost[cheap]
                if diff <= max(atol, tol * max(1.0, cost[cheap])):
                    break
                a, b = set(dear), set(cheap)
                sym = list(a ^ b)
                curv = float(problem.slope[sym].sum())
                step = routes[dear] if curv <= 0 else min(routes[dear], diff / curv)
                routes[dear] -= step
                routes[cheap] += step
                x[list(a - b)] -= step
                x[list(b - a)] += step
                moved += step
            for r in [r for r, f in routes.items() if f <= 1e-12 * demand[p]]:
                del routes[r]
        if moved == 0.0:
            break
    np.maximum(x, 0.0, out=x)
    return x


def solve_ue(plan: LinePlan | np.ndarray, instance: Instance, tol_gap: float = 1e-5,
             max_iterations: int = 2000, fw_iterations: int = 200, tol_eq: float = 1e-3) -> UeResult:
    """Equilibrium flows for the frequencies of ``plan`` (a :class:`LinePlan` or a ``y`` vector).

    Once the relative gap is below ``tol_gap``, the route flows are balanced so
    that no used route costs more than ``tol_eq`` above its OD's cheapest route.

    Raises :class:`UeError` when some OD cannot reach its destination over open lines.
    """
    y = plan.y if isinstance(plan, LinePlan) else np.asarray(plan, dtype=float)
    problem = UeProblem.from_plan(instance, y)
    ods = [(o.origin, o.destination) for o in instance.demand]
    demand = np.array([o.demand for o in instance.demand], dtype=float)

    x, routes, tau = _assign(problem, ods, demand, np.zeros(instance.cgn.num_arcs))
    z_by_od = [{r: demand[p]} for p, r in enumerate(routes)]
    gaps, pots = [], [problem.beckmann(x)]
    it = 0
    converged = False
    while it < max_iterations:
        aon, routes, tau = _assign(problem, ods, demand, x)
        gap = _relative_gap(problem, x, tau, demand)
        gaps.append(gap)
        if gap <= tol_gap:
            converged = True
            break
        it += 1
        if it <= fw_iterations:
            delta = aon - x
            g = float(problem.link_cost(x) @ delta)
            h = float(problem.slope @ (delta * delta))
            lam = (1.0 if g < 0 else 0.0) if h <= 0 else min(1.0, max(0.0, -g / h))
            if lam <= 0.0:
                converged = True
                break
            x = x + lam * delta
            for p, r in enumerate(routes):
                zp = z_by_od[p]
                for k in zp:
                    zp[k] *= 1.0 - lam
                zp[r] = zp.get(r, 0.0) + lam * demand[p]
        else:
            for p, r in enumerate(routes):
                z_by_od[p].setdefault(r, 0.0)
            x = _equilibrate(problem, x, z_by_od, demand, sweeps=5, tol=0.1 * tol_gap)
        pots.append(problem.beckmann(x))
    if converged and tol_eq > 0:
        # the gap bounds total excess cost; spread thin over routes it can still exceed tol_eq
        for p, r in enumerate(routes):
            z_by_od[p].setdefault(r, 0.0)
        x = _equilibrate(problem, x, z_by_od, demand, sweeps=50, tol=0.0, atol=0.5 * tol_eq)
        _, routes, tau = _assign(problem, ods, demand, x)
        gaps.append(_relative_gap(problem, x, tau, demand))
        pots.append(problem.beckmann(x))
    z = {(p, r): f for p, zp in enumerate(z_by_od) for r, f in zp.items() if f > 0}
    if not converged:
        log.warning("equilibrium stopped at gap %.3g after %d iterations", gaps[-1], it)
    return UeResult(x=x, z=z, beckmann=problem.beckmann(x), tau=tau, gap=gaps[-1],
                    system_cost=problem.system_cost(x), y=np.asarray(y, dtype=float),
                    gap_trajectory=gaps, beckmann_trajectory=pots, iterations=it,
                    converged=converged)


def wardrop_violations(result: UeResult, instance: Instance, tol_eq: float = 1e-3,
                       routes=None) -> list[tuple[int, tuple[int, ...], float]]:
    """Used routes dearer than their OD's cheapest route by more than ``tol_eq``.

    ``routes`` optionally adds pool routes ``(od, arcs)`` to check: any of them
    cheaper than ``tau`` by more than ``tol_eq`` is reported too (with a
    negative excess).
    """
    problem = UeProblem.from_plan(instance, result.y)
    d = problem.link_cost(result.x)
    bad = []
    for (p, r), f in result.z.items():
        if f > 1e-6:
            excess = float(d[list(r)].sum()) - result.tau[p]
            if excess > tol_eq:
                bad.append((p, r, excess))
    for p, r in routes or ():
        if problem.blocked[list(r)].any():
            continue
        excess = float(d[list(r)].sum()) - result.tau[p]
        if excess < -tol_eq:
            bad.append((p, tuple(r), excess))
    return bad


@dataclass
class SoUeGap:
    so_cost: float
    ue_cost: float

    @property
    def relative_gap(self) -> float:
        return (self.ue_cost - self.so_cost) / max(abs(self.so_cost), 1e-12)

    def to_dict(self) -> dict:
        return {"so_system_cost": self.so_cost, "ue_system_cost": self.ue_cost,
                "relative_gap": self.relative_gap}


def compare_so_ue(instance: Instance, so_flows: np.ndarray, so_y: np.ndarray, ue: UeResult,
                  tol: float = 1e-9) -> SoUeGap:
    """System cost of the system-optimal and equilibrium flows under the same plan."""
    so_y = np.asarray(so_y, dtype=float)
    if so_y.shape != ue.y.shape or not np.allclose(so_y, ue.y, rtol=1e-9, atol=tol):
        raise ValueError("system-optimal and equilibrium flows come from different plans")
    so_cost = true_objective(instance.cgn, so_flows, so_y)[0]
    ue_cost = true_objective(instance.cgn, ue.x, ue.y)[0]
    return SoUeGap(so_cost, ue_cost)
