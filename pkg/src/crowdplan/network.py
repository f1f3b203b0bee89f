"""Public transit network, line pool, demand and the change-and-go network.

Station nodes of the change-and-go network (CGN) carry ids ``0..S-1``; travel
nodes (one per station/line incidence) follow at ``S, S+1, ...`` in line order.
Arc ids are assigned in a fixed order (travel, board, alight, transfer) so
that rebuilding the CGN from the same instance always yields identical ids.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when an instance violates a structural requirement."""


class CoverageWarning(UserWarning):
    """Some track edge is served by no line, so edge coverage cannot hold."""


@dataclass(frozen=True)
class Station:
    id: int
    name: str


@dataclass(frozen=True)
class TrackEdge:
    id: int
    u: int
    v: int
    run_time: float

    @property
    def key(self) -> frozenset:
        return frozenset((self.u, self.v))


@dataclass(frozen=True)
class Line:
    id: int
    stations: tuple[int, ...]
    op_cost: float
    setup_cost: float
    f_min: float
    f_max: float
    gamma: float | None = None  # per-line override of the global crowding factor

    @property
    def edge_count(self) -> int:
        return len(self.stations) - 1

    @property
    def min_cost(self) -> float:
        """Cost of operating the line at its minimum frequency."""
        return self.setup_cost + self.op_cost * self.f_min

    def station_pairs(self) -> Iterator[tuple[int, int]]:
        return zip(self.stations[:-1], self.stations[1:])


@dataclass(frozen=True)
class OdPair:
    origin: int
    destination: int
    demand: float


@dataclass(frozen=True)
class Ptn:
    stations: tuple[Station, ...]
    edges: tuple[TrackEdge, ...]

    def __post_init__(self):
        n = len(self.stations)
        for i, s in enumerate(self.stations):
            if s.id != i:
                raise ValidationError(f"station ids must be dense 0..{n - 1}; got {s.id} at position {i}")
        seen = {}
        for i, e in enumerate(self.edges):
            if e.id != i:
                raise ValidationError(f"edge ids must be dense; got {e.id} at position {i}")
            if e.u == e.v:
                raise ValidationError(f"edge {e.id} is a self loop")
            if not (0 <= e.u < n and 0 <= e.v < n):
                raise ValidationError(f"edge {e.id} references an unknown station")
            if e.run_time <= 0:
                raise ValidationError(f"edge {e.id} must have positive run time")
            if e.key in seen:
                raise ValidationError(f"edges {seen[e.key]} and {e.id} join the same stations")
            seen[e.key] = e.id

    @cached_property
    def edge_lookup(self) -> dict[frozenset, TrackEdge]:
        return {e.key: e for e in self.edges}

    def edge_between(self, u: int, v: int) -> TrackEdge | None:
        return self.edge_lookup.get(frozenset((u, v)))

    @property
    def num_stations(self) -> int:
        return len(self.stations)


@dataclass(frozen=True)
class LinePool:
    lines: tuple[Line, ...]

    def __len__(self) -> int:
        return len(self.lines)

    def __iter__(self):
        return iter(self.lines)

    def __getitem__(self, i: int) -> Line:
        return self.lines[i]

    def line_edges(self, ptn: Ptn) -> list[list[int]]:
        """Track edge ids traversed by every line."""
        return [[ptn.edge_between(u, v).id for u, v in ln.station_pairs()] for ln in self.lines]

    def lines_on_edge(self, ptn: Ptn) -> list[list[int]]:
        per_edge: list[list[int]] = [[] for _ in ptn.edges]
        for ln, edges in zip(self.lines, self.line_edges(ptn)):
            for e in edges:
                per_edge[e].append(ln.id)
        return per_edge


@dataclass(frozen=True)
class Params:
    transfer_penalty: float = 5.0
    dwell: float = 1.0
    gamma: float = 0.05
    budget: float | None = None
    bidirectional: bool = True
    # edges whose coverage row is dropped from the master problem
    coverage_exempt: tuple[int, ...] = ()


@dataclass(frozen=True)
class Instance:
    ptn: Ptn
    pool: LinePool
    demand: tuple[OdPair, ...]
    params: Params = field(default_factory=Params)
    name: str = "instance"

    def __post_init__(self):
        validate_pool(self.ptn, self.pool)
        validate_demand(self.ptn, self.demand)

    def line_gamma(self, line: Line) -> float:
        return self.params.gamma if line.gamma is None else line.gamma

    @cached_property
    def cgn(self) -> "Cgn":
        p = self.params
        return build_cgn(self.ptn, self.pool, transfer_penalty=p.transfer_penalty,
                         bidirectional=p.bidirectional,
                         gamma=[self.line_gamma(ln) for ln in self.pool],
                         dwell=p.dwell)

    @property
    def total_demand(self) -> float:
        return float(sum(od.demand for od in self.demand))

    def replace(self, **changes) -> "Instance":
        """Copy with some fields (or ``params`` fields) replaced."""
        import dataclasses
        param_keys = {f.name for f in dataclasses.fields(Params)}
        pchanges = {k: v for k, v in changes.items() if k in param_keys}
        other = {k: v for k, v in changes.items() if k not in param_keys}
        params = dataclasses.replace(self.params, **pchanges) if pchanges else self.params
        return dataclasses.replace(self, params=params, **other)


def validate_pool(ptn: Ptn, pool: LinePool) -> None:
    if len(pool) == 0:
        raise ValidationError("line pool is empty")
    served = set()
    for i, ln in enumerate(pool):
        if ln.id != i:
            raise ValidationError(f"line ids must be dense; got {ln.id} at position {i}")
        if len(ln.stations) < 2:
            raise ValidationError(f"line {ln.id} needs at least two stations")
        if len(set(ln.stations)) != len(ln.stations):
            raise ValidationError(f"line {ln.id} repeats a station")
        for u, v in ln.station_pairs():
            if ptn.edge_between(u, v) is None:
                raise ValidationError(f"line {ln.id} is not a path in the PTN: no edge {u}-{v}")
        if min(ln.op_cost, ln.setup_cost, ln.f_min) < 0 or ln.f_max < ln.f_min:
            raise ValidationError(f"line {ln.id} has invalid costs or frequency bounds")
        if ln.gamma is not None and ln.gamma < 0:
            raise ValidationError(f"line {ln.id} has a negative crowding factor")
        served.update(ln.stations)
    missing = [s.id for s in ptn.stations if s.id not in served]
    if missing:
        raise ValidationError(f"stations served by no line: {missing}")


def validate_demand(ptn: Ptn, demand: Sequence[OdPair]) -> None:
    seen = set()
    n = ptn.num_stations
    for od in demand:
        if od.origin == od.destination:
            raise ValidationError(f"OD pair with origin equal to destination: {od.origin}")
        if not (0 <= od.origin < n and 0 <= od.destination < n):
            raise ValidationError(f"OD pair ({od.origin}, {od.destination}) references an unknown station")
        if od.demand <= 0:
            raise ValidationError(f"OD pair ({od.origin}, {od.destination}) must have positive demand")
        key = (od.origin, od.destination)
        if key in seen:
            raise ValidationError(f"duplicate OD pair {key}")
        seen.add(key)


class ArcKind(IntEnum):
    TRAVEL = 0
    TRANSFER = 1
    BOARD = 2
    ALIGHT = 3


@dataclass(frozen=True)
class CgnArc:
    id: int
    kind: ArcKind
    tail: int
    head: int
    cost: float
    gamma: float = 0.0
    line: int | None = None  # owning line of travel/board/alight arcs
    station: int | None = None  # station where a board/alight/transfer happens


@dataclass(frozen=True, eq=False)
class Cgn:
    num_stations: int
    travel_nodes: tuple[tuple[int, int], ...]  # (station, line) per travel node
    arcs: tuple[CgnArc, ...]
    bidirectional: bool
    num_lines: int

    @property
    def num_nodes(self) -> int:
        return self.num_stations + len(self.travel_nodes)

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    @cached_property
    def node_index(self) -> dict[tuple[int, int], int]:
        return {sl: self.num_stations + k for k, sl in enumerate(self.travel_nodes)}

    def travel_node(self, station: int, line: int) -> int:
        return self.node_index[(station, line)]

    def is_station_node(self, node: int) -> bool:
        return node < self.num_stations

    def node_line(self, node: int) -> int | None:
        if node < self.num_stations:
            return None
        return self.travel_nodes[node - self.num_stations][1]

    def node_station(self, node: int) -> int:
        if node < self.num_stations:
            return node
        return self.travel_nodes[node - self.num_stations][0]

    # array views used by the numerical modules
    @cached_property
    def kind(self) -> np.ndarray:
        return np.array([a.kind for a in self.arcs], dtype=np.int8)

    @cached_property
    def tail(self) -> np.ndarray:
        return np.array([a.tail for a in self.arcs], dtype=np.int64)

    @cached_property
    def head(self) -> np.ndarray:
        return np.array([a.head for a in self.arcs], dtype=np.int64)

    @cached_property
    def cost(self) -> np.ndarray:
        return np.array([a.cost for a in self.arcs], dtype=float)

    @cached_property
    def gamma(self) -> np.ndarray:
        return np.array([a.gamma for a in self.arcs], dtype=float)

    @cached_property
    def line(self) -> np.ndarray:
        """Owning line per arc, ``-1`` for transfer arcs."""
        return np.array([-1 if a.line is None else a.line for a in self.arcs], dtype=np.int64)

    @cached_property
    def travel_arcs(self) -> np.ndarray:
        return np.flatnonzero(self.kind == ArcKind.TRAVEL)

    @cached_property
    def arc_lines(self) -> tuple[frozenset, ...]:
        """Lines whose travel nodes an arc touches (two lines for a transfer)."""
        out = []
        for a in self.arcs:
            ls = {self.node_line(a.tail), self.node_line(a.head)} - {None}
            out.append(frozenset(ls))
        return tuple(out)

    def arcs_of_lines(self, lines) -> np.ndarray:
        """Ids of every arc touching a travel node of any of ``lines``."""
        lines = set(lines)
        return np.array([a.id for a, ls in zip(self.arcs, self.arc_lines) if ls & lines], dtype=np.int64)

    def count(self, kind: ArcKind) -> int:
        return int(np.sum(self.kind == kind))


def build_cgn(ptn: Ptn, pool: LinePool, transfer_penalty: float = 5.0, bidirectional: bool = True,
              gamma: float | Sequence[float] = 0.05, dwell: float = 0.0) -> Cgn:
    """Expand the PTN and line pool into a change-and-go network.

    Travel arcs cost ``run_time + dwell`` (dwell at the head station) and carry the
    line's crowding factor. Board/alight arcs cost nothing and transfer arcs cost
    ``transfer_penalty``; all three are uncrowded.

    Transfers are direct travel-node to travel-node arcs. Under unidirectional
    operation a transfer from line ``l1`` to ``l2`` at station ``s`` is only created
    when a passenger can arrive at ``s`` on ``l1`` and leave ``s`` on ``l2``.
    """
    validate_pool(ptn, pool)
    gammas = [float(gamma)] * len(pool) if np.isscalar(gamma) else [float(g) for g in gamma]
    if len(gammas) != len(pool):
        raise ValidationError("one crowding factor per line is required")
    if any(g < 0 for g in gammas):
        raise ValidationError("crowding factors must be non-negative")
    covered = set()
    for ln in pool:
        covered.update(ptn.edge_between(u, v).id for u, v in ln.station_pairs())
    uncovered = [e.id for e in ptn.edges if e.id not in covered]
    if uncovered:
        warnings.warn(f"track edges served by no line: {uncovered}", CoverageWarning, stacklevel=2)

    S = ptn.num_stations
    travel_nodes = [(s, ln.id) for ln in pool for s in ln.stations]
    node = {sl: S + k for k, sl in enumerate(travel_nodes)}
    arcs: list[CgnArc] = []

    def add(kind, tail, head, cost, g=0.0, line=None, station=None):
        arcs.append(CgnArc(len(arcs), kind, tail, head, float(cost), float(g), line, station))

    for ln in pool:
        g = gammas[ln.id]
        for u, v in ln.station_pairs():
            run = ptn.edge_between(u, v).run_time
            add(ArcKind.TRAVEL, node[(u, ln.id)], node[(v, ln.id)], run + dwell, g, ln.id)
        if bidirectional:
            for u, v in ln.station_pairs():
                run = ptn.edge_between(u, v).run_time
                add(ArcKind.TRAVEL, node[(v, ln.id)], node[(u, ln.id)], run + dwell, g, ln.id)
    for ln in pool:
        for s in ln.stations:
            add(ArcKind.BOARD, s, node[(s, ln.id)], 0.0, line=ln.id, station=s)
    for ln in pool:
        for s in ln.stations:
            add(ArcKind.ALIGHT, node[(s, ln.id)], s, 0.0, line=ln.id, station=s)

    lines_at: list[list[int]] = [[] for _ in range(S)]
    for ln in pool:
        for s in ln.stations:
            lines_at[s].append(ln.id)
    for s in range(S):
        for l1 in lines_at[s]:
            for l2 in lines_at[s]:
                if l1 == l2:
                    continue
                if not bidirectional:
                    arrive = pool[l1].stations.index(s) > 0
                    depart = pool[l2].stations.index(s) < len(pool[l2].stations) - 1
                    if not (arrive and depart):
                        continue
                add(ArcKind.TRANSFER, node[(s, l1)], node[(s, l2)], transfer_penalty, station=s)

    return Cgn(S, tuple(travel_nodes), tuple(arcs), bidirectional, len(pool))


@dataclass
class PricingGraph:
    """The part of a CGN a single OD pair may route over.

    Only board arcs leaving the origin station node and alight arcs entering the
    destination station node are usable, so station nodes never sit inside a route.
    """
    cgn: Cgn
    origin: int
    destination: int
    arc_ids: tuple[int, ...]

    @cached_property
    def out_arcs(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for a in self.arc_ids:
            out.setdefault(self.cgn.arcs[a].tail, []).append(a)
        return out

    def routes(self, max_routes: int | None = None) -> Iterator[tuple[int, ...]]:
        """Enumerate every simple origin-destination route (depth first, arc-id order)."""
        arcs = self.cgn.arcs
        found = 0
        stack = [(self.origin, iter(self.out_arcs.get(self.origin, ())))]
        visited = {self.origin}
        path: list[int] = []
        while stack:
            node, it = stack[-1]
            a = next(it, None)
            if a is None:
                stack.pop()
                visited.discard(node)
                if path:
                    path.pop()
                continue
            h = arcs[a].head
            if h in visited:
                continue
            if h == self.destination:
                yield tuple(path + [a])
                found += 1
                if max_routes is not None and found >= max_routes:
                    return
                continue
            visited.add(h)
            path.append(a)
            stack.append((h, iter(self.out_arcs.get(h, ()))))


def pricing_graph(cgn: Cgn, od: tuple[int, int], banned: Sequence[int] = ()) -> PricingGraph:
    origin, destination = od
    if origin == destination:
        raise ValidationError("origin equals destination")
    for s in od:
        if not (0 <= s < cgn.num_stations):
            raise ValidationError(f"station {s} is not in the CGN")
    banned = set(banned)
    keep = []
    for a in cgn.arcs:
        if a.id in banned:
            continue
        if a.kind == ArcKind.BOARD and a.tail != origin:
            continue
        if a.kind == ArcKind.ALIGHT and a.head != destination:
            continue
        keep.append(a.id)
    return PricingGraph(cgn, origin, destination, tuple(keep))


def route_cost(cgn: Cgn, route: Sequence[int]) -> float:
    return float(cgn.cost[list(route)].sum())


def is_valid_route(cgn: Cgn, od: tuple[int, int], route: Sequence[int]) -> bool:
    """A simple directed path from the origin station node to the destination's."""
    if not route:
        return False
    arcs = cgn.arcs
    if arcs[route[0]].tail != od[0] or arcs[route[-1]].head != od[1]:
        return False
    nodes = [od[0]]
    for prev, a in zip(route, route[1:]):
        if arcs[prev].head != arcs[a].tail:
            return False
    for a in route:
        nodes.append(arcs[a].head)
    if len(set(nodes)) != len(nodes):
        return False
    return all(not cgn.is_station_node(n) for n in nodes[1:-1])
