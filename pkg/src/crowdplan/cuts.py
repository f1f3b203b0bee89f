"""Tangent cuts for the rotated cone ``theta * y >= gamma * x**2``.

For an anchor ``(xh, yh)`` with ``yh > 0`` the tangent plane of ``gamma x^2 / y``
gives the valid inequality::

    theta >= gamma * (2 xh / yh * x - xh**2 / yh**2 * y)

which holds with equality at ``(xh, yh, gamma xh^2 / yh)``. Rows are stored in
this gamma-scaled form so that ``gamma`` never divides anything.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import LpProblem, LpSolution


@dataclass(frozen=True)
class TangentCut:
    arc: int
    x_hat: float
    y_hat: float
    gamma: float
    row: int | None = None

    @property
    def x_coef(self) -> float:
        return 2.0 * self.gamma * self.x_hat / self.y_hat

    @property
    def y_coef(self) -> float:
        return self.gamma * (self.x_hat / self.y_hat) ** 2

    def bound(self, x, y):
        """Lower bound the cut imposes on theta at ``(x, y)``."""
        return self.x_coef * x - self.y_coef * y

    def violation(self, theta, x, y):
        return self.bound(x, y) - theta


def make_cut(arc: int, x_hat: float, y_hat: float, gamma: float, eps: float = 0.0) -> TangentCut:
    y_hat = max(y_hat, eps)
    if not y_hat > 0:
        raise ValueError(f"cut anchor needs y > 0, got {y_hat}")
    if gamma < 0:
        raise ValueError("crowding factor must be non-negative")
    return TangentCut(arc, float(x_hat), float(y_hat), float(gamma))


def cone_violation(x, y, theta, gamma):
    """``gamma x^2 - theta y``; positive entries lie outside the cone."""
    x, y, theta, gamma = map(np.asarray, (x, y, theta, gamma))
    return gamma * x * x - theta * y


def relative_violation(x, y, theta, gamma):
    """Cone violation scaled by ``max(1, gamma x^2)``; never negative."""
    x, y, theta, gamma = map(lambda v: np.asarray(v, dtype=float), (x, y, theta, gamma))
    q = gamma * x * x
    return np.maximum(q - theta * y, 0.0) / np.maximum(1.0, q)


def find_violations(x, y, theta, gamma, tol: float = 1e-5, eps: float = 1e-6,
                    ratio_cap: float = np.inf):
    """Indices of violated cone points and the anchor to cut each one at.

    A point with ``y == 0`` and ``x > 0`` is anchored at ``y = eps``. When ``y`` is
    tiny relative to the violation the anchor is lifted towards
    ``gamma x^2 / (2 theta)`` (capped at 1): the cut still separates the point
    but its coefficients stay moderate. Anchors are also kept at
    ``x / y <= ratio_cap``; a capped cut is returned only if it still separates.
    """
    x, y, theta, gamma = map(lambda v: np.asarray(v, dtype=float), (x, y, theta, gamma))
    q = gamma * x * x
    viol = q - theta * np.maximum(y, 0.0)
    idx = np.flatnonzero((viol > tol * np.maximum(1.0, q)) & (x > 0) & (gamma > 0))
    with np.errstate(divide="ignore", over="ignore"):
        y_ref = np.minimum(1.0, q[idx] / (2.0 * np.maximum(theta[idx], 0.0)))
    anchors = np.maximum.reduce([np.maximum(y[idx], 0.0), np.full(len(idx), eps), y_ref,
                                 x[idx] / ratio_cap])
    r = x[idx] / anchors
    g = gamma[idx]
    cut_val = 2.0 * g * r * x[idx] - g * r * r * np.maximum(y[idx], 0.0)
    keep = cut_val - theta[idx] > tol * np.maximum(1.0, q[idx])
    return idx[keep], x[idx][keep], anchors[keep]


@dataclass
class _ConeVars:
    theta: int
    x: int
    y: int
    gamma: float


@dataclass
class CutPool:
    """Tangent cuts living in an :class:`LpProblem`.

    Each registered cone ``theta * y >= gamma x^2`` names three LP columns. The
    pool adds at most one cut per cone per round and drops cuts that went slack.
    """
    lp: LpProblem
    tol_violation: float = 1e-5
    tol_slack: float = 1e-6
    eps: float = 1e-6
    ratio_cap: float = np.inf
    tol_total: float = 0.0
    cones: dict[int, _ConeVars] = field(default_factory=dict)
    active: dict[int, TangentCut] = field(default_factory=dict)  # row key -> cut
    slack_count: dict[int, int] = field(default_factory=dict)
    added_total: int = 0
    retired_total: int = 0

    def register(self, arc: int, theta_col: int, x_col: int, y_col: int, gamma: float) -> None:
        self.cones[arc] = _ConeVars(theta_col, x_col, y_col, float(gamma))

    def unregister(self, arc: int) -> None:
        rows = [r for r, c in self.active.items() if c.arc == arc]
        self.lp.remove_rows(rows)
        for r in rows:
            del self.active[r]
            self.slack_count.pop(r, None)
        self.cones.pop(arc, None)

    def _arrays(self, sol: LpSolution):
        arcs = np.fromiter(self.cones, dtype=np.int64, count=len(self.cones))
        v = list(self.cones.values())
        x = sol.values([c.x for c in v])
        y = sol.values([c.y for c in v])
        th = sol.values([c.theta for c in v])
        g = np.array([c.gamma for c in v])
        return arcs, x, y, th, g

    def max_violation(self, sol: LpSolution, positive_y_only: bool = False) -> float:
        if not self.cones:
            return 0.0
        _, x, y, th, g = self._arrays(sol)
        rv = relative_violation(x, y, th, g)
        if positive_y_only:
            rv = rv[y > 0]
        return float(rv.max(initial=0.0))

    def underestimate(self, sol: LpSolution) -> float:
        """Total ``gamma x^2 / y - theta`` the LP is missing (``inf`` if some ``y`` is 0 under load)."""
        if not self.cones:
            return 0.0
        _, x, y, th, g = self._arrays(sol)
        q = g * x * x
        loaded = q > 0
        if np.any(loaded & (y <= 0)):
            return float("inf")
        return float(np.sum(np.maximum(q[loaded] / y[loaded] - th[loaded], 0.0)))

    def separate(self, sol: LpSolution, scale: float | None = None) -> list[TangentCut]:
        """Add a cut for every violated cone at the solution point.

        With ``tol_total > 0`` and a ``scale`` (typically the LP objective),
        nothing is added while the total underestimate stays below
        ``tol_total * |scale|``.
        """
        if not self.cones:
            return []
        if self.tol_total > 0 and scale is not None:
            if self.underestimate(sol) <= self.tol_total * abs(scale):
                return []
        arcs, x, y, th, g = self._arrays(sol)
        idx, xa, ya = find_violations(x, y, th, g, self.tol_violation, self.eps,
                                     self.ratio_cap)
        anchors = {}
        for c in self.active.values():
            anchors.setdefault(c.arc, []).append((c.x_hat, c.y_hat))
        new, senses, rhs, entries = [], [], [], []
        for i, xh, yh in zip(idx, xa, ya):
            arc = int(arcs[i])
            if any(abs(px - xh) <= 1e-9 * max(1.0, abs(xh)) and abs(py - yh) <= 1e-9 * max(1.0, yh)
                   for px, py in anchors.get(arc, ())):
                continue
            cv = self.cones[arc]
            cut = make_cut(arc, xh, yh, cv.gamma)
            new.append(cut)
            senses.append(">=")
            rhs.append(0.0)
            entries.append([(cv.theta, 1.0), (cv.x, -cut.x_coef), (cv.y, cut.y_coef)])
        rows = self.lp.add_rows(senses, rhs, entries) if new else []
        out = []
        for r, cut in zip(rows, new):
            cut = TangentCut(cut.arc, cut.x_hat, cut.y_hat, cut.gamma, r)
            self.active[r] = cut
            out.append(cut)
        self.added_total += len(out)
        return out

    def retire_slack(self, sol: LpSolution, patience: int = 1) -> int:
        """Remove cuts whose row activity exceeded ``tol_slack`` in ``patience`` consecutive checks."""
        rows = [r for r in self.active if sol.has_row(r)]
        if not rows:
            return 0
        act = sol.activities(rows)
        drop = []
        for r, a in zip(rows, act):
            if a > self.tol_slack:
                n = self.slack_count.get(r, 0) + 1
                self.slack_count[r] = n
                if n >= patience:
                    drop.append(r)
            else:
                self.slack_count.pop(r, None)
        self.lp.remove_rows(drop)
        for r in drop:
            del self.active[r]
            self.slack_count.pop(r, None)
        self.retired_total += len(drop)
        return len(drop)

    def __len__(self) -> int:
        return len(self.active)


def retire_slack_cuts(pool: CutPool, sol: LpSolution, tol_slack: float | None = None) -> int:
    if tol_slack is not None:
        pool.tol_slack = tol_slack
    return pool.retire_slack(sol)
