"""Plot-ready summaries of solved plans: crowding distributions, travel-time
trade-offs and system-optimum versus equilibrium gaps, written as CSV."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .master import UndefinedCrowding, true_objective
from .network import ArcKind, Instance


@dataclass
class CrowdingProfile:
    """Crowding level ``100 x / (y kappa)`` of every travel arc on an operated line."""
    arcs: np.ndarray
    load: np.ndarray
    frequency: np.ndarray
    level: np.ndarray  # percent
    kappa: float

    def cdf(self) -> list[tuple[float, float]]:
        """``(level, cumulative fraction)`` at each distinct level, ending at 1."""
        if len(self.level) == 0:
            return [(0.0, 1.0)]
        lv = np.sort(self.level)
        uniq, last = np.unique(lv[::-1], return_index=True)
        frac = (len(lv) - last) / len(lv)
        return [(float(a), float(b)) for a, b in zip(uniq, frac)]

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.level, q)) if len(self.level) else 0.0


def crowding_cdf(instance: Instance, y, x, kappa: float = 1.0, tol: float = 1e-9) -> CrowdingProfile:
    """Arc-level crowding of flows ``x`` under frequencies ``y``.

    Only travel arcs of lines with positive frequency enter the distribution.
    ``kappa`` is a nominal capacity per unit frequency and only rescales levels.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    cgn = instance.cgn
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != cgn.num_arcs or len(y) != cgn.num_lines:
        raise ValueError("flows or frequencies do not match the instance")
    ta = cgn.travel_arcs
    yt = y[cgn.line[ta]]
    bad = (x[ta] > tol) & (yt <= tol)
    if bad.any():
        raise UndefinedCrowding(f"load on travel arcs {ta[bad][:5].tolist()} of closed lines")
    on = yt > tol
    arcs = ta[on]
    load, freq = x[arcs], yt[on]
    return CrowdingProfile(arcs, load, freq, 100.0 * load / (freq * kappa), kappa)


@dataclass
class TravelTimes:
    """Per-passenger averages of two routings of the same instance."""
    aptt_aware: float
    aptt_base: float
    att_aware: float
    att_base: float

    @property
    def aptt_reduction(self) -> float:
        """Percent by which the crowding-aware plan lowers perceived travel time."""
        return 100.0 * (self.aptt_base - self.aptt_aware) / self.aptt_base

    @property
    def att_increase(self) -> float:
        """Percent by which it raises plain travel time."""
        return 100.0 * (self.att_aware - self.att_base) / self.att_base


def averages(instance: Instance, x, y) -> tuple[float, float]:
    """``(APTT, ATT)``: perceived and plain travel time per passenger."""
    perceived, travel, _ = true_objective(instance.cgn, x, y)
    n = instance.total_demand
    return perceived / n, travel / n


def aptt_att(instance: Instance, aware: tuple, base: tuple) -> TravelTimes:
    """Compare a crowding-aware routing with a benchmark one, both as ``(x, y)``.

    The benchmark is usually the plan optimized with every crowding factor at
    zero. Both routings are scored with the crowding factors of ``instance``.
    """
    n_arcs, n_lines = instance.cgn.num_arcs, instance.cgn.num_lines
    for x, y in (aware, base):
        if len(x) != n_arcs or len(y) != n_lines:
            raise ValueError("routing does not belong to this instance")
    pa, ta = averages(instance, *aware)
    pb, tb = averages(instance, *base)
    return TravelTimes(pa, pb, ta, tb)


def objective_decomposition(instance: Instance, x, y) -> dict:
    cgn = instance.cgn
    x = np.asarray(x, dtype=float)
    perceived, travel, crowd = true_objective(cgn, x, y)
    transfers = float(x[cgn.kind == ArcKind.TRANSFER] @ cgn.cost[cgn.kind == ArcKind.TRANSFER])
    n = instance.total_demand
    return {"perceived": perceived, "travel_time": travel, "in_vehicle": travel - transfers,
            "transfer_penalty": transfers, "crowding": crowd, "aptt": perceived / n,
            "att": travel / n, "passengers": n}


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])
    return path


def write_crowding_cdf(profile: CrowdingProfile, path) -> Path:
    return write_rows(path, ["level_pct", "cumulative_fraction"], profile.cdf())


def write_decomposition(decomp: dict, path, label: str = "plan") -> Path:
    return write_rows(path, ["routing", "component", "value"],
                      [(label, k, float(v)) for k, v in decomp.items()])


def write_so_ue_gap(gap: dict, path) -> Path:
    return write_rows(path, ["so_system_cost", "ue_system_cost", "relative_gap"],
                      [(float(gap["so_system_cost"]), float(gap["ue_system_cost"]),
                        float(gap["relative_gap"]))])
