"""Cut-and-column generation loops and the diving heuristic.

Three orderings of the two separation oracles are supported:

* ``FCTP`` adds violated cone cuts and prices routes only when no cut is violated,
* ``FPTC`` prices first and separates cuts only when no route prices out,
* ``APAC`` does both in every iteration.

Diving repeatedly fixes the fractional line with the largest frequency to 1 and
re-runs column generation until the budget cannot open another line.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .lp import LpStatus
from .master import LinePlan, MasterModel, build_master
from .network import Instance
from .pricing import farkas_price, price_round

log = logging.getLogger(__name__)


class Variant(Enum):
    FCTP = "fctp"
    FPTC = "fptc"
    APAC = "apac"


class InfeasibleInstance(RuntimeError):
    """No feasible line plan exists; ``certificate`` summarizes why."""

    def __init__(self, message: str, certificate: dict | None = None):
        super().__init__(message)
        self.certificate = certificate or {}


@dataclass
class Controls:
    variant: Variant = Variant.FCTP
    delta1: float = 5.0  # purge when routes per OD exceed this on average
    delta2: float = 10.0  # purge routes with reduced cost above this
    window: int = 20  # stagnation window I0 (iterations)
    threshold: float = 1e-4  # stagnation threshold eps0 (relative change)
    window_step: int = 1
    window_min: int = 1
    threshold_step: float = 5e-4
    stagnation: bool = True
    tol_violation: float = 1e-5
    tol_total: float = 0.0  # skip separation while the summed cone violation is below this share
    tol_slack: float = 1e-6
    cut_patience: int = 3  # slack rounds before a cut is dropped mid-loop
    eps: float = 1e-6
    tol_price: float = 1e-7
    final_tol_violation: float = 1e-7
    cost_weight: float = 1e-6
    max_iterations: int = 20000
    max_farkas_rounds: int = 100
    time_limit: float | None = None
    dive: bool = True
    dive_batch: int = 1  # lines fixed per dive round

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = Variant(self.variant.lower())
        if self.dive_batch < 1:
            raise ValueError("dive_batch must be at least 1")
        if self.delta1 < 1 or self.delta2 <= 0:
            raise ValueError("need delta1 >= 1 and delta2 > 0")
        if not (self.window >= self.window_min >= 1) or self.threshold < 0:
            raise ValueError("invalid stagnation schedule")

    @classmethod
    def large(cls, **kw) -> "Controls":
        """Looser early stop for big instances.

        APAC is the default here: cutting and pricing in the same round avoids
        re-tightening every cone for a column set that is about to change.
        """
        base = dict(variant=Variant.APAC, window=5, threshold=1e-2, threshold_step=2e-3,
                    tol_violation=1e-3, tol_total=1e-4, dive_batch=2)
        base.update(kw)
        return cls(**base)

    def schedule(self, dive_round: int) -> tuple[int, float]:
        return (max(self.window_min, self.window - self.window_step * dive_round),
                self.threshold + self.threshold_step * dive_round)


@dataclass
class PhaseResult:
    status: str  # converged | stagnated | gap_closed | iteration_limit | time_limit | infeasible
    iterations: int
    farkas_rounds: int
    objective: float


@dataclass
class DiveState:
    fixed: list[int] = field(default_factory=list)
    remaining_budget: float = 0.0
    round: int = 0
    objectives: list[float] = field(default_factory=list)


@dataclass
class SolveReport:
    variant: str
    budget: float
    root_bound: float = float("nan")
    root_objective: float = float("nan")
    final_lp_objective: float = float("nan")
    true_objective: float = float("nan")
    gap: float = float("nan")
    dive_rounds: int = 0
    iterations: int = 0
    farkas_rounds: int = 0
    cuts_added: int = 0
    cuts_retired: int = 0
    columns_added: int = 0
    columns_purged: int = 0
    rmp_time: float = 0.0
    pricing_time: float = 0.0
    cut_time: float = 0.0
    wall_time: float = 0.0
    rmp_solves: int = 0
    pricing_calls: int = 0
    budget_overrun: bool = False
    repaired_lines: list[int] = field(default_factory=list)
    dive_objectives: list[float] = field(default_factory=list)
    stop_reasons: list[str] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    phase_bound: float = float("-inf")  # best Lagrangian bound seen in the current phase

    def to_dict(self) -> dict:
        d = asdict(self)
        d["average_rmp_time"] = self.rmp_time / max(1, self.rmp_solves)
        d["average_pricing_time"] = self.pricing_time / max(1, self.pricing_calls)
        return d


@dataclass
class Solution:
    plan: LinePlan
    report: SolveReport
    master: MasterModel
    arc_flows: np.ndarray
    route_flows: list[tuple[int, tuple[int, ...], float]]

    def to_dict(self) -> dict:
        inst = self.master.instance
        return {
            "instance": inst.name,
            "gamma": inst.params.gamma,
            "budget": self.report.budget,
            "plan": self.plan.to_dict(),
            "arc_flows": {str(a): float(v) for a, v in enumerate(self.arc_flows) if v > 1e-9},
            "route_flows": [{"od": [*self.master.ods[p]], "arcs": list(r), "flow": f}
                            for p, r, f in self.route_flows if f > 1e-9],
            "run": {k: v for k, v in self.report.to_dict().items() if k != "trace"},
        }


class _Clock:
    def __init__(self, limit):
        self.t0 = time.perf_counter()
        self.limit = limit

    def expired(self) -> bool:
        return self.limit is not None and time.perf_counter() - self.t0 > self.limit


def _solve(m: MasterModel, rep: SolveReport):
    sol = m.solve()
    rep.rmp_time += sol.seconds
    rep.rmp_solves += 1
    return sol


def _price(m: MasterModel, sol, ctl: Controls, rep: SolveReport, farkas: bool = False) -> int:
    t = time.perf_counter()
    duals = m.dual_snapshot(sol)
    if farkas:
        found = farkas_price(m.cgn, m.ods, duals, ctl.tol_price)
    else:
        rnd = price_round(m.cgn, m.ods, duals, ctl.tol_price)
        found = rnd.routes
        # Lagrangian bound: the RMP value plus the best possible gain per OD
        gain = float(m.demand @ np.minimum(rnd.min_reduced_cost, 0.0))
        rep.phase_bound = max(rep.phase_bound, m.lower_bound(sol) + gain)
    added = [c for c in m.attach_routes([(r.od, r.arcs) for r in found]) if c is not None]
    rep.pricing_time += time.perf_counter() - t
    rep.pricing_calls += 1
    rep.columns_added += len(added)
    return len(added)


def _separate(m: MasterModel, sol, rep: SolveReport) -> int:
    t = time.perf_counter()
    n = len(m.cuts.separate(sol, scale=sol.objective))
    rep.cut_time += time.perf_counter() - t
    rep.cuts_added += n
    return n


def _purge(m: MasterModel, sol, ctl: Controls, rep: SolveReport) -> int:
    if m.routes.average_per_od <= ctl.delta1:
        return 0
    cols = [c for c in m.routes.routes if sol.has_col(c)]
    rc = sol.rcs(cols)
    drop = [c for c, r in zip(cols, rc) if r > ctl.delta2]
    m.remove_routes(drop)
    rep.columns_purged += len(drop)
    return len(drop)


def colgen_phase(m: MasterModel, ctl: Controls, dive_round: int = 0, rep: SolveReport | None = None,
                 stagnation: bool | None = None, clock: _Clock | None = None) -> tuple[PhaseResult, object]:
    """Alternate RMP solves with cut separation and pricing until nothing is added.

    Slack cuts are retired whenever a round finds no violated cone, i.e. once
    the cut loop has settled for the current column set. With stagnation on,
    the phase also stops when the RMP objective moved by less than the relative
    threshold over the last ``window`` samples. FCTP and APAC sample at every
    pricing call and FPTC once pricing finds nothing, so each sample sees the
    cut set settled as far as the variant's loop order allows.
    """
    rep = rep if rep is not None else SolveReport(ctl.variant.value, m.budget)
    stagnation = ctl.stagnation if stagnation is None else stagnation
    window, threshold = ctl.schedule(dive_round)
    rep.phase_bound = float("-inf")
    history: list[float] = []  # objective at each pricing call
    last = np.nan
    farkas = 0
    it = 0
    while True:
        if it >= ctl.max_iterations:
            return PhaseResult("iteration_limit", it, farkas, last), sol
        if clock is not None and clock.expired():
            return PhaseResult("time_limit", it, farkas, last), sol
        sol = _solve(m, rep)
        it += 1
        rep.iterations += 1
        if sol.status is LpStatus.INFEASIBLE:
            farkas += 1
            rep.farkas_rounds += 1
            added = _price(m, sol, ctl, rep, farkas=True) if farkas <= ctl.max_farkas_rounds else 0
            rep.trace.append({"round": dive_round, "iter": it, "kind": "farkas", "added": added})
            if added == 0:
                return PhaseResult("infeasible", it, farkas, np.nan), sol
            continue
        if sol.status is not LpStatus.OPTIMAL:
            raise RuntimeError(f"RMP solve failed: {sol.status.value} {sol.message}")
        obj = last = sol.objective
        priced = False

        v = ctl.variant
        cuts = cols = 0
        if v is Variant.FCTP:
            cuts = _separate(m, sol, rep)
            if cuts == 0:
                cols = _price(m, sol, ctl, rep)
                priced = True
        elif v is Variant.FPTC:
            cols = _price(m, sol, ctl, rep)
            priced = True
            if cols == 0:
                cuts = _separate(m, sol, rep)
        else:
            cuts = _separate(m, sol, rep)
            cols = _price(m, sol, ctl, rep)
            priced = True
        retired = m.cuts.retire_slack(sol, ctl.cut_patience)
        rep.cuts_retired += retired
        purged = _purge(m, sol, ctl, rep) if cols else 0
        rep.trace.append({"round": dive_round, "iter": it, "objective": obj, "cuts_added": cuts,
                          "cuts_retired": retired, "columns_added": cols, "columns_purged": purged,
                          "rmp_time": sol.seconds})
        if cuts == 0 and cols == 0:
            return PhaseResult("converged", it, farkas, obj), sol
        # FPTC samples the objective only once pricing is exhausted, just before its cut round
        sample = priced and (v is not Variant.FPTC or cols == 0)
        if not (stagnation and sample):
            continue
        history.append(obj)
        # once no cone was cut this round, the Lagrangian bound certifies the RMP value
        # to the stagnation threshold
        if cuts == 0 and obj - rep.phase_bound <= threshold * max(abs(obj), 1e-12):
            return PhaseResult("gap_closed", it, farkas, obj), sol
        if len(history) > window:
            ref = history[-1 - window]
            if abs(ref - obj) <= threshold * max(abs(ref), 1e-12):
                return PhaseResult("stagnated", it, farkas, obj), sol


def _is_integral(w: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    return (w <= tol) | (w >= 1 - tol)


def _committed(m: MasterModel, lines, y: np.ndarray) -> float:
    return float(sum(m.e[l] + m.d[l] * max(m.f_min[l], y[l]) for l in lines))


def _cover_repair(m: MasterModel, open_lines: set[int]) -> list[int]:
    """Open the cheapest lines (per newly covered edge) until every edge is covered."""
    inst = m.instance
    edges = [set(es) for es in inst.pool.line_edges(inst.ptn)]
    need = {e.id for e in inst.ptn.edges} - set(inst.params.coverage_exempt)
    for l in open_lines:
        need -= edges[l]
    added = []
    while need:
        best, ratio = None, np.inf
        for ln in inst.pool:
            g = len(edges[ln.id] & need)
            if g and ln.min_cost / g < ratio - 1e-12:
                best, ratio = ln.id, ln.min_cost / g
        added.append(best)
        need -= edges[best]
    return added


def dive_candidates(w: np.ndarray, y: np.ndarray, fixed=(), tol: float = 1e-6) -> list[int]:
    """Unfixed fractional lines, largest frequency first; ties go to the lower id."""
    frac = [l for l in range(len(w)) if l not in fixed and not _is_integral(w[l:l + 1], tol)[0]]
    return sorted(frac, key=lambda l: (-y[l], l))


def dive(m: MasterModel, ctl: Controls, rep: SolveReport, sol, clock: _Clock | None = None):
    """Fix lines to 1 by largest frequency, then close the rest and reoptimize routing."""
    state = DiveState(remaining_budget=m.budget)
    state.objectives.append(sol.objective)
    L = len(m.y_col)
    tol = 1e-6
    keep_open: set[int] = set()
    while True:
        w, y = m.w(sol), m.y(sol)
        order = dive_candidates(w, y, state.fixed, tol)
        if not order:
            keep_open = {l for l in range(L) if w[l] >= 1 - tol}
            rep.stop_reasons.append("integral")
            break
        # fixed lines cost at least their minimum-frequency price
        floor = _committed(m, state.fixed, np.zeros(L))
        order = [l for l in order if floor + m.e[l] + m.d[l] * m.f_min[l] <= m.budget + 1e-9]
        if not order:
            keep_open = set(state.fixed) | {l for l in range(L) if w[l] >= 1 - tol}
            rep.stop_reasons.append("budget")
            break
        batch = [order[0]]
        for l in order[1:]:
            if len(batch) == ctl.dive_batch:
                break
            if _committed(m, state.fixed + batch + [l], y) <= m.budget + 1e-9:
                batch.append(l)
        for l in batch:
            m.fix_line(l, 1)
            state.fixed.append(l)
        state.round += 1
        res, new_sol = colgen_phase(m, ctl, state.round, rep, clock=clock)
        rep.stop_reasons.append(res.status)
        if res.status == "infeasible":
            # the fix cannot be afforded: undo it and stop diving
            for l in batch:
                m.lp.set_bounds(m.w_col[l], 0.0, 1.0)
                state.fixed.pop()
            res, sol = colgen_phase(m, ctl, state.round, rep, clock=clock)
            keep_open = set(state.fixed) | {l for l in range(L) if m.w(sol)[l] >= 1 - tol}
            rep.stop_reasons.append("fix_infeasible")
            break
        sol = new_sol
        state.objectives.append(sol.objective)
        y = m.y(sol)
        state.remaining_budget = m.budget - _committed(m, state.fixed, y)
        w = m.w(sol)
        can_open = [l for l in range(L) if l not in state.fixed and w[l] < 1 - tol
                    and m.e[l] + m.d[l] * m.f_min[l] <= state.remaining_budget + 1e-9]
        if not can_open:
            keep_open = set(state.fixed) | {l for l in range(L) if w[l] >= 1 - tol}
            rep.stop_reasons.append("budget")
            break
        if clock is not None and clock.expired():
            keep_open = set(state.fixed) | {l for l in range(L) if w[l] >= 1 - tol}
            rep.stop_reasons.append("time_limit")
            break
    rep.dive_rounds = state.round
    rep.dive_objectives = state.objectives
    return keep_open, state


def finalize(m: MasterModel, ctl: Controls, rep: SolveReport, open_lines: set[int],
             clock: _Clock | None = None):
    """Close every other line, repair coverage, and reoptimize routing to convergence."""
    repair = _cover_repair(m, open_lines)
    if repair:
        rep.repaired_lines = repair
        open_lines = set(open_lines) | set(repair)
    L = len(m.y_col)
    for l in range(L):
        if l in open_lines:
            m.fix_line(l, 1)
    for l in range(L):
        if l not in open_lines:
            m.fix_line(l, 0)
    need = float(sum(m.e[l] + m.d[l] * m.f_min[l] for l in open_lines))
    if need > m.budget + 1e-9:
        rep.budget_overrun = True
        m.set_budget(need)
    m.cuts.tol_violation = ctl.final_tol_violation
    m.cuts.tol_total = 0.0
    res, sol = colgen_phase(m, ctl, 0, rep, stagnation=False, clock=None)
    rep.stop_reasons.append("final_" + res.status)
    if res.status == "infeasible":
        raise InfeasibleInstance("routing over the selected lines is infeasible",
                                 {"open_lines": sorted(open_lines)})
    return sol


def solve_lpp_c(instance: Instance, controls: Controls | None = None,
                budget: float | None = None) -> Solution:
    """Relaxation by cut-and-column generation, diving to an integral plan, final routing."""
    ctl = controls or Controls()
    clock = _Clock(ctl.time_limit)
    t0 = time.perf_counter()
    m = build_master(instance, budget, tol_violation=ctl.tol_violation, tol_slack=ctl.tol_slack,
                     eps=ctl.eps, cost_weight=ctl.cost_weight)
    m.cuts.tol_total = ctl.tol_total
    rep = SolveReport(ctl.variant.value, m.budget)
    res, sol = colgen_phase(m, ctl, 0, rep, clock=clock)
    rep.stop_reasons.append("root_" + res.status)
    if res.status == "infeasible":
        raise InfeasibleInstance(
            "the relaxation is infeasible for this budget",
            {"budget": m.budget, "farkas_ray_budget_weight": float(sol.ray(m.budget_row)),
             "farkas_value": float(m.lp.farkas_value(sol.farkas_ray))})
    rep.root_bound = rep.phase_bound
    rep.root_objective = m.lp_objective(sol)
    if ctl.dive:
        open_lines, _ = dive(m, ctl, rep, sol, clock)
    else:
        w = m.w(sol)
        open_lines = {l for l in range(len(w)) if w[l] >= 1 - 1e-6}
    sol = finalize(m, ctl, rep, open_lines, clock)
    plan = m.plan(sol)
    rep.final_lp_objective = m.lp_objective(sol)
    rep.true_objective = plan.perceived
    rep.gap = (plan.perceived - rep.root_bound) / max(abs(plan.perceived), 1e-12)
    rep.wall_time = time.perf_counter() - t0
    flows = m.route_flows(sol)
    routes = [(m.routes.routes[c][0], m.routes.routes[c][1], float(f)) for c, f in flows.items()]
    log.info("solved %s: bound %.4f plan %.4f gap %.3f%%", instance.name, rep.root_bound,
             plan.perceived, 100 * rep.gap)
    return Solution(plan, rep, m, m.arc_flows(sol), routes)


def solve_relaxation(instance: Instance, controls: Controls | None = None,
                     budget: float | None = None, routes=None):
    """Converged LP relaxation only (no diving); returns ``(master, solution, report)``."""
    ctl = controls or Controls()
    m = build_master(instance, budget, routes=routes, tol_violation=ctl.tol_violation,
                     tol_slack=ctl.tol_slack, eps=ctl.eps, cost_weight=ctl.cost_weight)
    m.cuts.tol_total = ctl.tol_total
    rep = SolveReport(ctl.variant.value, m.budget)
    res, sol = colgen_phase(m, ctl, 0, rep)
    rep.stop_reasons.append(res.status)
    if res.status == "infeasible":
        raise InfeasibleInstance("the relaxation is infeasible", {"budget": m.budget})
    return m, sol, rep
