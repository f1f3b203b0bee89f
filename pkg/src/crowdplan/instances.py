"""Grid benchmark instances, JSON round-tripping and a baseline budget.

The grid family: unit grid PTN, a line pool made of every full row and column
plus a seeded sample of shorter straight segments and L-shaped paths, and a
seeded OD table. Line costs follow ``d = 8 * N`` per frequency unit and
``e = 1.5 * d`` for setup, where ``N`` is the number of edges of the line.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .network import Instance, Line, LinePool, OdPair, Params, Ptn, Station, TrackEdge, ValidationError


@dataclass(frozen=True)
class GridSpec:
    rows: int = 5
    cols: int = 5
    run_time: float = 6.0
    dwell: float = 1.0
    transfer_penalty: float = 5.0
    pool_size: int = 128
    cost_per_edge: float = 8.0
    setup_ratio: float = 1.5
    f_min: float = 1.0
    f_max: float = 5.0
    n_od: int = 567
    total_demand: int = 2547
    gamma: float = 0.05
    budget: float | None = None
    min_line_edges: int = 2
    seed: int = 0


def grid_ptn(rows: int, cols: int, run_time: float = 6.0) -> Ptn:
    if rows < 2 or cols < 2:
        raise ValidationError("grids need at least two rows and two columns")
    stations = tuple(Station(i * cols + j, f"r{i}c{j}") for i in range(rows) for j in range(cols))
    pairs = [(i * cols + j, i * cols + j + 1) for i in range(rows) for j in range(cols - 1)]
    pairs += [(i * cols + j, (i + 1) * cols + j) for i in range(rows - 1) for j in range(cols)]
    edges = tuple(TrackEdge(k, u, v, run_time) for k, (u, v) in enumerate(pairs))
    return Ptn(stations, edges)


def _grid_paths(rows: int, cols: int, min_edges: int):
    """Full rows/columns, then every other straight segment and L-shape (one orientation each)."""
    node = lambda i, j: i * cols + j
    full = [tuple(node(i, j) for j in range(cols)) for i in range(rows)]
    full += [tuple(node(i, j) for i in range(rows)) for j in range(cols)]
    extra = []
    for i in range(rows):
        for a in range(cols):
            for b in range(a + min_edges, cols):
                if (a, b) != (0, cols - 1):
                    extra.append(tuple(node(i, j) for j in range(a, b + 1)))
    for j in range(cols):
        for a in range(rows):
            for b in range(a + min_edges, rows):
                if (a, b) != (0, rows - 1):
                    extra.append(tuple(node(i, j) for i in range(a, b + 1)))
    # L-shapes: horizontal leg along row i from column j0 to j1, then vertical to row i1
    for i in range(rows):
        for j0 in range(cols):
            for j1 in range(cols):
                if j1 == j0:
                    continue
                step = 1 if j1 > j0 else -1
                leg = [node(i, j) for j in range(j0, j1 + step, step)]
                for i1 in range(rows):
                    if i1 == i:
                        continue
                    vstep = 1 if i1 > i else -1
                    path = leg + [node(k, j1) for k in range(i + vstep, i1 + vstep, vstep)]
                    if len(path) - 1 >= min_edges and path[0] < path[-1]:
                        extra.append(tuple(path))
    return full, extra


def gen_grid(spec: GridSpec = GridSpec()) -> Instance:
    """Seeded grid instance; identical output for identical specs."""
    rng = np.random.default_rng(spec.seed)
    ptn = grid_ptn(spec.rows, spec.cols, spec.run_time)
    full, extra = _grid_paths(spec.rows, spec.cols, spec.min_line_edges)
    if spec.pool_size < len(full):
        raise ValidationError(f"pool_size {spec.pool_size} cannot hold the {len(full)} covering lines")
    if spec.pool_size > len(full) + len(extra):
        raise ValidationError(f"pool_size {spec.pool_size} exceeds the {len(full) + len(extra)} "
                              f"available grid paths")
    pick = rng.choice(len(extra), size=spec.pool_size - len(full), replace=False)
    paths = full + [extra[k] for k in sorted(pick)]
    lines = []
    for k, st in enumerate(paths):
        n = len(st) - 1
        d = spec.cost_per_edge * n
        lines.append(Line(k, st, d, spec.setup_ratio * d, spec.f_min, spec.f_max))

    S = spec.rows * spec.cols
    n_pairs = S * (S - 1)
    if spec.n_od > n_pairs:
        raise ValidationError(f"n_od {spec.n_od} exceeds the {n_pairs} ordered station pairs")
    if spec.total_demand < spec.n_od:
        raise ValidationError("total demand must give every OD pair at least one passenger")
    flat = np.sort(rng.choice(n_pairs, size=spec.n_od, replace=False))
    weights = rng.gamma(2.0, 1.0, size=spec.n_od)
    counts = 1 + rng.multinomial(spec.total_demand - spec.n_od, weights / weights.sum())
    demand = []
    for f, n in zip(flat, counts):
        o, r = divmod(int(f), S - 1)
        dst = r if r < o else r + 1
        demand.append(OdPair(o, dst, float(n)))
    params = Params(transfer_penalty=spec.transfer_penalty, dwell=spec.dwell, gamma=spec.gamma,
                    budget=spec.budget, bidirectional=True)
    name = f"grid{spec.rows}x{spec.cols}-L{spec.pool_size}-od{spec.n_od}-s{spec.seed}"
    return Instance(ptn, LinePool(tuple(lines)), tuple(demand), params, name)


def greedy_cover(instance: Instance) -> list[int]:
    """Lines picked by greedy weighted set cover of the track edges.

    Each step takes the line with the lowest minimum-frequency cost per newly
    covered edge; ties go to the smaller line id.
    """
    ptn, pool = instance.ptn, instance.pool
    exempt = set(instance.params.coverage_exempt)
    need = {e.id for e in ptn.edges} - exempt
    edges = [set(es) for es in pool.line_edges(ptn)]
    orphan = need - set().union(*edges)
    if orphan:
        raise ValidationError(f"edges no line covers: {sorted(orphan)}")
    chosen = []
    while need:
        best, best_ratio = None, np.inf
        for ln, es in zip(pool, edges):
            gain = len(es & need)
            if gain == 0:
                continue
            ratio = ln.min_cost / gain
            if ratio < best_ratio - 1e-12:
                best, best_ratio = ln.id, ratio
        chosen.append(best)
        need -= edges[best]
    return chosen


def surrogate_baseline_budget(instance: Instance) -> float:
    """Cost of the greedy edge cover with every chosen line at minimum frequency."""
    return float(sum(instance.pool[l].min_cost for l in greedy_cover(instance)))


# JSON

def load_schema() -> dict:
    text = resources.files("crowdplan").joinpath("schema/instance.schema.json").read_text()
    return json.loads(text)


def instance_to_dict(inst: Instance) -> dict:
    p = inst.params
    return {
        "name": inst.name,
        "stations": [{"id": s.id, "name": s.name} for s in inst.ptn.stations],
        "edges": [{"id": e.id, "u": e.u, "v": e.v, "run_time": e.run_time} for e in inst.ptn.edges],
        "lines": [{"id": ln.id, "stations": list(ln.stations), "op_cost": ln.op_cost,
                   "setup_cost": ln.setup_cost, "f_min": ln.f_min, "f_max": ln.f_max,
                   "gamma": ln.gamma} for ln in inst.pool],
        "demand": [{"origin": od.origin, "destination": od.destination, "demand": od.demand}
                   for od in inst.demand],
        "params": {"transfer_penalty": p.transfer_penalty, "dwell": p.dwell, "gamma": p.gamma,
                   "budget": p.budget, "bidirectional": p.bidirectional,
                   "coverage_exempt": list(p.coverage_exempt)},
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        jsonschema.validate(data, load_schema())
    except jsonschema.ValidationError as err:
        raise ValidationError(f"instance file does not match the schema: {err.message}") from err
    stations = tuple(Station(s["id"], s.get("name", str(s["id"]))) for s in data["stations"])
    edges = tuple(TrackEdge(e["id"], e["u"], e["v"], float(e["run_time"])) for e in data["edges"])
    lines = tuple(Line(ln["id"], tuple(ln["stations"]), float(ln["op_cost"]), float(ln["setup_cost"]),
                       float(ln["f_min"]), float(ln["f_max"]),
                       None if ln.get("gamma") is None else float(ln["gamma"]))
                  for ln in data["lines"])
    demand = tuple(OdPair(d["origin"], d["destination"], float(d["demand"])) for d in data["demand"])
    p = data.get("params", {})
    params = Params(transfer_penalty=float(p.get("transfer_penalty", 5.0)),
                    dwell=float(p.get("dwell", 1.0)), gamma=float(p.get("gamma", 0.05)),
                    budget=None if p.get("budget") is None else float(p["budget"]),
                    bidirectional=bool(p.get("bidirectional", True)),
                    coverage_exempt=tuple(p.get("coverage_exempt", ())))
    return Instance(Ptn(stations, edges), LinePool(lines), demand, params, data.get("name", "instance"))


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1))


def load_instance(path) -> Instance:
    return instance_from_dict(json.loads(Path(path).read_text()))
