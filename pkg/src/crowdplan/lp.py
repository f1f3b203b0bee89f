"""Incremental linear programs on top of HiGHS.

Rows and columns are addressed by stable integer keys that survive deletions of
other rows/columns. Duals follow the sensitivity convention d(objective)/d(rhs),
so for a minimization a binding ``>=`` row has a non-negative dual.

Farkas rays use the same orientation: the weight on a ``>=`` row is
non-negative, on a ``<=`` row non-positive and free on an equality row. A ray
``y`` proves infeasibility when ``y.b - max_{l<=x<=u} (A^T y).x > 0``, with ``b``
taken as the finite side of each row picked by the sign of ``y``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import highspy
import numpy as np
from scipy import sparse

INF = highspy.kHighsInf


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class LpError(RuntimeError):
    """Numerical breakdown the solver could not classify."""


_SENSES = {">=": (0.0, INF), "<=": (-INF, 0.0), "=": (0.0, 0.0)}


def _row_bounds(sense: str, rhs: float) -> tuple[float, float]:
    if sense not in _SENSES:
        raise ValueError(f"unknown row sense {sense!r}")
    lo, up = _SENSES[sense]
    return (rhs if lo == 0.0 else lo, rhs if up == 0.0 else up)


@dataclass
class LpSolution:
    status: LpStatus
    objective: float
    col_keys: tuple[int, ...]
    row_keys: tuple[int, ...]
    x: np.ndarray
    row_dual: np.ndarray
    reduced_cost: np.ndarray
    row_activity: np.ndarray
    farkas_ray: np.ndarray | None = None
    iterations: int = 0
    seconds: float = 0.0
    message: str = ""
    _col_pos: dict = field(default=None, repr=False)
    _row_pos: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._col_pos = {k: i for i, k in enumerate(self.col_keys)}
        self._row_pos = {k: i for i, k in enumerate(self.row_keys)}

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def has_row(self, row: int) -> bool:
        return row in self._row_pos

    def has_col(self, col: int) -> bool:
        return col in self._col_pos

    def value(self, col: int) -> float:
        return float(self.x[self._col_pos[col]])

    def values(self, cols: Sequence[int], missing: float | None = None) -> np.ndarray:
        """Primal values; columns added after this solve read as ``missing`` if given."""
        if missing is None:
            return self.x[[self._col_pos[c] for c in cols]] if len(cols) else np.zeros(0)
        return np.array([self.x[self._col_pos[c]] if c in self._col_pos else missing for c in cols],
                        dtype=float)

    def dual(self, row: int) -> float:
        return float(self.row_dual[self._row_pos[row]])

    def duals(self, rows: Sequence[int]) -> np.ndarray:
        return self.row_dual[[self._row_pos[r] for r in rows]] if len(rows) else np.zeros(0)

    def rc(self, col: int) -> float:
        return float(self.reduced_cost[self._col_pos[col]])

    def rcs(self, cols: Sequence[int]) -> np.ndarray:
        return self.reduced_cost[[self._col_pos[c] for c in cols]] if len(cols) else np.zeros(0)

    def activity(self, row: int) -> float:
        return float(self.row_activity[self._row_pos[row]])

    def activities(self, rows: Sequence[int]) -> np.ndarray:
        return self.row_activity[[self._row_pos[r] for r in rows]] if len(rows) else np.zeros(0)

    def ray(self, row: int) -> float:
        if self.farkas_ray is None:
            raise ValueError("no Farkas ray: the LP is not infeasible")
        return float(self.farkas_ray[self._row_pos[row]])

    def rays(self, rows: Sequence[int]) -> np.ndarray:
        if self.farkas_ray is None:
            raise ValueError("no Farkas ray: the LP is not infeasible")
        return self.farkas_ray[[self._row_pos[r] for r in rows]] if len(rows) else np.zeros(0)


class LpProblem:
    """A minimization LP that can grow and shrink between solves.

    HiGHS keeps its basis across edits, so re-solving after adding cuts or
    columns warm-starts from the previous optimum.
    """

    def __init__(self, feasibility_tol: float = 1e-7, optimality_tol: float = 1e-7,
                 iteration_limit: int | None = None):
        self._h = highspy.Highs()
        h = self._h
        h.setOptionValue("output_flag", False)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("solver", "simplex")
        h.setOptionValue("primal_feasibility_tolerance", feasibility_tol)
        h.setOptionValue("dual_feasibility_tolerance", optimality_tol)
        if iteration_limit is not None:
            h.setOptionValue("simplex_iteration_limit", int(iteration_limit))
        self._col_keys: list[int] = []
        self._row_keys: list[int] = []
        self._col_pos: dict[int, int] = {}
        self._row_pos: dict[int, int] = {}
        self._next_col = 0
        self._next_row = 0
        self.retries = 0
        self.solves = 0
        # primal simplex suits a basis that only gained columns, dual simplex the rest
        self._gained_cols = False
        self._dual_edit = False

    # dimensions and lookups
    @property
    def num_cols(self) -> int:
        return len(self._col_keys)

    @property
    def num_rows(self) -> int:
        return len(self._row_keys)

    @property
    def col_keys(self) -> tuple[int, ...]:
        return tuple(self._col_keys)

    @property
    def row_keys(self) -> tuple[int, ...]:
        return tuple(self._row_keys)

    def _cpos(self, key: int) -> int:
        try:
            return self._col_pos[key]
        except KeyError:
            raise IndexError(f"unknown column {key}") from None

    def _rpos(self, key: int) -> int:
        try:
            return self._row_pos[key]
        except KeyError:
            raise IndexError(f"unknown row {key}") from None

    def has_col(self, key: int) -> bool:
        return key in self._col_pos

    def col_positions(self, keys: Sequence[int]) -> np.ndarray:
        return np.array([self._cpos(k) for k in keys], dtype=np.int64)

    def row_positions(self, keys: Sequence[int]) -> np.ndarray:
        return np.array([self._rpos(k) for k in keys], dtype=np.int64)

    def has_row(self, key: int) -> bool:
        return key in self._row_pos

    # edits
    def add_columns(self, costs: Sequence[float], lower: Sequence[float], upper: Sequence[float],
                    entries: Sequence[Iterable[tuple[int, float]]] | None = None) -> list[int]:
        """Append columns; ``entries[j]`` lists ``(row_key, coef)`` for column ``j``."""
        n = len(costs)
        if not (len(lower) == len(upper) == n):
            raise ValueError("cost and bound lengths differ")
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if np.any(lower > upper):
            raise ValueError("column lower bound exceeds upper bound")
        starts, idx, val = [], [], []
        for j in range(n):
            starts.append(len(idx))
            for r, c in (entries[j] if entries is not None else ()):
                idx.append(self._rpos(r))
                val.append(float(c))
        self._h.addCols(n, np.asarray(costs, dtype=float), lower, upper, len(idx),
                        np.asarray(starts, dtype=np.int32), np.asarray(idx, dtype=np.int32),
                        np.asarray(val, dtype=float))
        self._gained_cols = True
        keys = list(range(self._next_col, self._next_col + n))
        self._next_col += n
        for k in keys:
            self._col_pos[k] = len(self._col_keys)
            self._col_keys.append(k)
        return keys

    def add_column(self, cost: float, lower: float = 0.0, upper: float = INF,
                   entries: Iterable[tuple[int, float]] = ()) -> int:
        return self.add_columns([cost], [lower], [upper], [list(entries)])[0]

    def add_rows(self, senses: Sequence[str], rhs: Sequence[float],
                 entries: Sequence[Iterable[tuple[int, float]]], satisfied: bool = False) -> list[int]:
        """Append rows; ``entries[i]`` lists ``(col_key, coef)`` for row ``i``.

        Pass ``satisfied=True`` when the current primal point already meets the rows.
        """
        n = len(senses)
        lo, up = zip(*(_row_bounds(s, float(b)) for s, b in zip(senses, rhs))) if n else ((), ())
        starts, idx, val = [], [], []
        for i in range(n):
            starts.append(len(idx))
            for c, a in entries[i]:
                idx.append(self._cpos(c))
                val.append(float(a))
        self._h.addRows(n, np.asarray(lo, dtype=float), np.asarray(up, dtype=float), len(idx),
                        np.asarray(starts, dtype=np.int32), np.asarray(idx, dtype=np.int32),
                        np.asarray(val, dtype=float))
        self._dual_edit |= not satisfied
        keys = list(range(self._next_row, self._next_row + n))
        self._next_row += n
        for k in keys:
            self._row_pos[k] = len(self._row_keys)
            self._row_keys.append(k)
        return keys

    def add_row(self, sense: str, rhs: float, entries: Iterable[tuple[int, float]]) -> int:
        return self.add_rows([sense], [rhs], [list(entries)])[0]

    def remove_rows(self, keys: Sequence[int]) -> None:
        if not len(keys):
            return
        pos = sorted({self._rpos(k) for k in keys})
        self._h.deleteRows(len(pos), np.asarray(pos, dtype=np.int32))
        drop = set(pos)
        self._row_keys = [k for i, k in enumerate(self._row_keys) if i not in drop]
        self._row_pos = {k: i for i, k in enumerate(self._row_keys)}

    def remove_columns(self, keys: Sequence[int]) -> None:
        if not len(keys):
            return
        pos = sorted({self._cpos(k) for k in keys})
        self._h.deleteCols(len(pos), np.asarray(pos, dtype=np.int32))
        drop = set(pos)
        self._col_keys = [k for i, k in enumerate(self._col_keys) if i not in drop]
        self._col_pos = {k: i for i, k in enumerate(self._col_keys)}

    def set_bounds(self, col: int, lower: float, upper: float) -> None:
        if lower > upper:
            raise ValueError("column lower bound exceeds upper bound")
        self._h.changeColBounds(self._cpos(col), float(lower), float(upper))
        self._dual_edit = True

    def bounds(self, col: int) -> tuple[float, float]:
        lp = self._h.getLp()
        j = self._cpos(col)
        return float(lp.col_lower_[j]), float(lp.col_upper_[j])

    def set_cost(self, col: int, cost: float) -> None:
        self._h.changeColCost(self._cpos(col), float(cost))

    def set_rhs(self, row: int, sense: str, rhs: float) -> None:
        lo, up = _row_bounds(sense, rhs)
        self._h.changeRowBounds(self._rpos(row), lo, up)
        self._dual_edit = True

    # matrix access
    def arrays(self):
        """Current data as ``(A csc, cost, col_lower, col_upper, row_lower, row_upper)``."""
        lp = self._h.getLp()
        m, n = lp.num_row_, lp.num_col_
        a = lp.a_matrix_
        data = (np.asarray(a.value_), np.asarray(a.index_), np.asarray(a.start_))
        # HiGHS may hold the matrix row-wise after rows were appended
        if a.format_ == highspy.MatrixFormat.kRowwise:
            A = sparse.csr_matrix(data, shape=(m, n)).tocsc()
        else:
            A = sparse.csc_matrix(data, shape=(m, n))
        return (A, np.asarray(lp.col_cost_), np.asarray(lp.col_lower_), np.asarray(lp.col_upper_),
                np.asarray(lp.row_lower_), np.asarray(lp.row_upper_))

    def write(self, path: str) -> None:
        """Dump the LP in CPLEX LP or MPS format (chosen by file suffix)."""
        self._h.writeModel(str(path))

    def get_basis(self):
        return self._h.getBasis()

    # solving
    def solve(self, warm_start=None) -> LpSolution:
        h = self._h
        if warm_start is not None:
            h.setBasis(warm_start)
        t0 = time.perf_counter()
        primal = self._gained_cols and not self._dual_edit
        h.setOptionValue("simplex_strategy", 4 if primal else 1)
        self._gained_cols = self._dual_edit = False
        h.run()
        ms = h.getModelStatus()
        bad = (highspy.HighsModelStatus.kNotset, highspy.HighsModelStatus.kSolveError,
               highspy.HighsModelStatus.kUnknown)
        if ms in bad:
            # a warm start can stall on a badly conditioned basis; retry from scratch,
            # then with presolve
            for opt, val, reset in (("simplex_strategy", 1, 1), ("presolve", "on", "off")):
                h.setOptionValue(opt, val)
                h.clearSolver()
                h.run()
                ms = h.getModelStatus()
                h.setOptionValue(opt, reset)
                if ms not in bad:
                    break
            self.retries += 1
        secs = time.perf_counter() - t0
        self.solves += 1
        info = h.getInfo()
        iters = int(info.simplex_iteration_count)
        M = highspy.HighsModelStatus
        if ms == M.kOptimal or (ms == M.kModelEmpty and self.num_rows == 0):
            sol = h.getSolution()
            x = np.asarray(sol.col_value, dtype=float)
            return LpSolution(LpStatus.OPTIMAL, float(info.objective_function_value),
                              self.col_keys, self.row_keys, x,
                              np.asarray(sol.row_dual, dtype=float),
                              np.asarray(sol.col_dual, dtype=float),
                              np.asarray(sol.row_value, dtype=float),
                              iterations=iters, seconds=secs)
        empty_c, empty_r = np.zeros(self.num_cols), np.zeros(self.num_rows)
        if ms == M.kInfeasible:
            ray = self._farkas_ray()
            return LpSolution(LpStatus.INFEASIBLE, float("nan"), self.col_keys, self.row_keys,
                              empty_c, empty_r, empty_c.copy(), empty_r.copy(), farkas_ray=ray,
                              iterations=iters, seconds=secs)
        if ms in (M.kUnbounded, M.kUnboundedOrInfeasible):
            if ms == M.kUnboundedOrInfeasible:
                ray = self._farkas_ray(require=False)
                if ray is not None:
                    return LpSolution(LpStatus.INFEASIBLE, float("nan"), self.col_keys, self.row_keys,
                                      empty_c, empty_r, empty_c.copy(), empty_r.copy(),
                                      farkas_ray=ray, iterations=iters, seconds=secs)
            return LpSolution(LpStatus.UNBOUNDED, float("-inf"), self.col_keys, self.row_keys,
                              empty_c, empty_r, empty_c.copy(), empty_r.copy(),
                              iterations=iters, seconds=secs)
        return LpSolution(LpStatus.ITERATION_LIMIT, float("nan"), self.col_keys, self.row_keys,
                          empty_c, empty_r, empty_c.copy(), empty_r.copy(), iterations=iters,
                          seconds=secs, message=h.modelStatusToString(ms))

    def farkas_value(self, y: np.ndarray, tol: float = 1e-9) -> float:
        """Certificate value of ``y``; positive means ``y`` proves infeasibility.

        Returns ``-inf`` when ``y`` has the wrong sign on some row or when the
        bound side it needs is infinite.
        """
        A, _, cl, cu, rl, ru = self.arrays()
        return farkas_value(A, cl, cu, rl, ru, y, tol)

    def _farkas_ray(self, require: bool = True) -> np.ndarray | None:
        status, has, y = self._h.getDualRay()
        if has:
            y = np.asarray(y, dtype=float)
            for cand in (y, -y):
                if self.farkas_value(cand) > 1e-9:
                    return cand
        y = self._elastic_ray()
        if y is not None and self.farkas_value(y) > 1e-9:
            return y
        if require:
            raise LpError("solver reported infeasibility but no valid Farkas ray was recovered")
        return None

    def _elastic_ray(self) -> np.ndarray | None:
        """Ray from the duals of the phase-one problem: minimize total row violation."""
        A, _, cl, cu, rl, ru = self.arrays()
        m, n = A.shape
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("presolve", "off")
        I = sparse.identity(m, format="csc")
        M = sparse.hstack([A, I, -I], format="csc")
        lp = highspy.HighsLp()
        lp.num_col_ = n + 2 * m
        lp.num_row_ = m
        lp.col_cost_ = np.concatenate([np.zeros(n), np.ones(2 * m)])
        lp.col_lower_ = np.concatenate([cl, np.zeros(2 * m)])
        lp.col_upper_ = np.concatenate([cu, np.full(2 * m, INF)])
        lp.row_lower_ = rl
        lp.row_upper_ = ru
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = M.indptr
        lp.a_matrix_.index_ = M.indices
        lp.a_matrix_.value_ = M.data
        h.passModel(lp)
        h.run()
        if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            return None
        if h.getInfo().objective_function_value <= 1e-9:
            return None
        return np.asarray(h.getSolution().row_dual, dtype=float)


def farkas_value(A, col_lower, col_upper, row_lower, row_upper, y, tol: float = 1e-9) -> float:
    """``y.b - max_box (A^T y).x`` or ``-inf`` if ``y`` is not a proper ray."""
    y = np.asarray(y, dtype=float)
    rl, ru = np.asarray(row_lower, dtype=float), np.asarray(row_upper, dtype=float)
    pos, neg = y > tol, y < -tol
    if np.any(rl[pos] <= -INF) or np.any(ru[neg] >= INF):
        return float("-inf")
    yb = float(y[pos] @ rl[pos] + y[neg] @ ru[neg])
    g = A.T @ y
    scale = max(1.0, float(np.abs(y).max(initial=0.0)))
    cl, cu = np.asarray(col_lower, dtype=float), np.asarray(col_upper, dtype=float)
    gp, gn = g > tol * scale, g < -tol * scale
    if np.any(cu[gp] >= INF) or np.any(cl[gn] <= -INF):
        return float("-inf")
    box = float(g[gp] @ cu[gp] + g[gn] @ cl[gn])
    return yb - box
