"""Shortest-path pricing of route columns.

Routes are searched on a split copy of the CGN: every station appears twice,
once as a source (only boarding arcs leave it) and once as a sink (only
alighting arcs enter it). Travel nodes keep their identity. A route can then
never pass through a station node, and one single-source run per origin prices
all OD pairs that share it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .network import ArcKind, Cgn


class PricingError(RuntimeError):
    pass


class DualMode(Enum):
    OPTIMAL = "optimal"
    FARKAS = "farkas"


@dataclass
class DualSnapshot:
    """Arc weights and OD prices a pricing round works from.

    ``arc`` holds one weight per CGN arc (the flow-link dual), ``od`` one price
    per OD pair (the demand dual). Arcs flagged in ``blocked`` may not be used.
    """
    arc: np.ndarray
    od: np.ndarray
    mode: DualMode = DualMode.OPTIMAL
    blocked: np.ndarray | None = None

    def reduced_cost(self, od_index: int, route: Sequence[int]) -> float:
        return float(-self.od[od_index] + self.arc[list(route)].sum())


@dataclass(frozen=True)
class PricedRoute:
    od: int
    arcs: tuple[int, ...]
    reduced_cost: float


@dataclass
class SplitGraph:
    """Index bookkeeping for the source/sink split of a CGN."""
    cgn: Cgn
    u: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    pair_arc: dict = field(init=False)

    def __post_init__(self):
        c = self.cgn
        S, T = c.num_stations, len(c.travel_nodes)
        self.num_nodes = T + 2 * S
        tail, head, kind = c.tail, c.head, c.kind
        u = tail - S
        v = head - S
        board = kind == ArcKind.BOARD
        alight = kind == ArcKind.ALIGHT
        u[board] = T + tail[board]
        v[alight] = T + S + head[alight]
        self.u, self.v = u, v
        self.pair_arc = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(u, v))}
        self.T, self.S = T, S

    def source(self, station: int) -> int:
        return self.T + station

    def sink(self, station: int) -> int:
        return self.T + self.S + station

    def matrix(self, weights: np.ndarray, usable: np.ndarray) -> sparse.csr_matrix:
        idx = np.flatnonzero(usable)
        return sparse.csr_matrix((weights[idx], (self.u[idx], self.v[idx])),
                                 shape=(self.num_nodes, self.num_nodes))

    def trace(self, pred_row: np.ndarray, src: int, dst: int) -> tuple[int, ...]:
        arcs = []
        node = dst
        while node != src:
            p = pred_row[node]
            if p < 0:
                raise PricingError(f"broken predecessor chain at node {node}")
            arcs.append(self.pair_arc[(int(p), int(node))])
            node = p
        return tuple(reversed(arcs))


_split_cache: dict[int, SplitGraph] = {}


def split_graph(cgn: Cgn) -> SplitGraph:
    sg = _split_cache.get(id(cgn))
    if sg is None or sg.cgn is not cgn:
        sg = SplitGraph(cgn)
        _split_cache[id(cgn)] = sg
    return sg


def shortest_routes(cgn: Cgn, ods: Sequence[tuple[int, int]], weights: np.ndarray,
                    blocked: np.ndarray | None = None):
    """Minimum-weight route and its weight for every OD (``None``/``inf`` if unreachable)."""
    sg = split_graph(cgn)
    weights = np.asarray(weights, dtype=float)
    usable = np.ones(cgn.num_arcs, dtype=bool) if blocked is None else ~blocked
    G = sg.matrix(weights, usable)
    origins = sorted({o for o, _ in ods})
    src = [sg.source(o) for o in origins]
    row = {o: i for i, o in enumerate(origins)}
    if np.all(weights[usable] >= 0):
        dist, pred = csgraph.dijkstra(G, directed=True, indices=src, return_predecessors=True)
    else:
        try:
            dist, pred = csgraph.bellman_ford(G, directed=True, indices=src, return_predecessors=True)
        except csgraph.NegativeCycleError as err:
            neg = np.flatnonzero(usable & (weights < 0))
            raise PricingError(f"negative cycle among arc weights; {len(neg)} negative arcs, "
                               f"most negative {weights[neg].min():.3g}") from err
    dist = np.atleast_2d(dist)
    pred = np.atleast_2d(pred)
    out = []
    for o, d in ods:
        i = row[o]
        t = sg.sink(d)
        if not np.isfinite(dist[i, t]):
            out.append((None, np.inf))
            continue
        out.append((sg.trace(pred[i], src[i], t), float(dist[i, t])))
    return out


@dataclass
class PricingRound:
    routes: list[PricedRoute]
    min_reduced_cost: np.ndarray  # per OD, ``inf`` when the OD is unreachable


def price_round(cgn: Cgn, ods: Sequence[tuple[int, int]], duals: DualSnapshot,
                tol: float = 1e-7) -> PricingRound:
    found = shortest_routes(cgn, ods, duals.arc, duals.blocked)
    out = []
    best = np.full(len(ods), np.inf)
    for p, (route, w) in enumerate(found):
        if route is None:
            continue
        psi = w - duals.od[p]
        best[p] = psi
        if psi < -tol:
            out.append(PricedRoute(p, route, float(psi)))
    return PricingRound(out, best)


def price_all(cgn: Cgn, ods: Sequence[tuple[int, int]], duals: DualSnapshot,
              tol: float = 1e-7) -> list[PricedRoute]:
    """Routes with reduced cost below ``-tol``, at most one per OD.

    Works for both optimal and Farkas duals: in either case a route's reduced
    cost is its arc-weight sum minus its OD price.
    """
    return price_round(cgn, ods, duals, tol).routes


def farkas_price(cgn: Cgn, ods: Sequence[tuple[int, int]], duals: DualSnapshot,
                 tol: float = 1e-7) -> list[PricedRoute]:
    if duals.mode is not DualMode.FARKAS:
        raise ValueError("Farkas pricing needs a Farkas dual snapshot")
    return price_all(cgn, ods, duals, tol)


def unreachable_ods(cgn: Cgn, ods: Sequence[tuple[int, int]],
                    blocked: np.ndarray | None = None) -> list[int]:
    found = shortest_routes(cgn, ods, np.ones(cgn.num_arcs), blocked)
    return [p for p, (r, _) in enumerate(found) if r is None]
