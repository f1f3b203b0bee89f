"""Command line entry point: ``crowdplan {solve,ue,gen-grid,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .equilibrium import UeError, compare_so_ue, solve_ue
from .instances import (GridSpec, gen_grid, instance_from_dict, instance_to_dict, load_instance,
                        save_instance, surrogate_baseline_budget)
from .network import Instance, ValidationError
from .orchestrator import Controls, InfeasibleInstance, solve_lpp_c
from .report import (crowding_cdf, objective_decomposition, write_crowding_cdf, write_rows,
                     write_so_ue_gap)

log = logging.getLogger("crowdplan")


def _write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1))


def _flows(data: dict, n: int) -> np.ndarray:
    x = np.zeros(n)
    for a, v in data.get("arc_flows", {}).items():
        x[int(a)] = v
    return x


def _plan_instance(plan: dict, override: str | None) -> Instance:
    if override:
        return load_instance(override)
    if "instance_data" not in plan:
        raise ValidationError("plan file carries no instance; pass --instance")
    return instance_from_dict(plan["instance_data"])


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if args.gamma is not None:
        inst = inst.replace(gamma=args.gamma)
    budget = args.budget
    if budget is None and args.budget_pct is not None:
        budget = args.budget_pct / 100.0 * surrogate_baseline_budget(inst)
    make = Controls.large if args.large else Controls
    kw = {"variant": args.variant} if args.variant else {}
    ctl = make(time_limit=args.time_limit, **kw)
    sol = solve_lpp_c(inst, ctl, budget=budget)
    out = sol.to_dict()
    out["instance_data"] = instance_to_dict(inst)
    if args.ue:
        ue = solve_ue(sol.plan, inst, tol_gap=args.tol_gap)
        out["so_ue"] = compare_so_ue(inst, sol.arc_flows, sol.plan.y, ue).to_dict()
    _write_json(args.out, out)
    rep = sol.report
    print(f"{inst.name}: bound {rep.root_bound:.4f}  plan {rep.true_objective:.4f}  "
          f"gap {100 * rep.gap:.2f}%  lines {sol.plan.open_lines}  {rep.wall_time:.1f}s")
    return 0


def cmd_ue(args) -> int:
    plan = json.loads(Path(args.plan).read_text())
    inst = load_instance(args.instance) if args.instance else _plan_instance(plan, None)
    if args.gamma is not None:
        inst = inst.replace(gamma=args.gamma)
    y = np.asarray(plan["plan"]["y"], dtype=float)
    ue = solve_ue(y, inst, tol_gap=args.tol_gap)
    out = ue.to_dict(inst)
    if "arc_flows" in plan:
        so = _flows(plan, inst.cgn.num_arcs)
        out["so_ue"] = compare_so_ue(inst, so, y, ue).to_dict()
    _write_json(args.out, out)
    print(f"equilibrium gap {ue.gap:.3g} after {ue.iterations} iterations, "
          f"system cost {ue.system_cost:.4f}")
    return 0


def cmd_gen_grid(args) -> int:
    spec = GridSpec(rows=args.rows, cols=args.cols, seed=args.seed, pool_size=args.pool_size,
                    n_od=args.n_od, total_demand=args.demand, gamma=args.gamma)
    inst = gen_grid(spec)
    save_instance(inst, args.out)
    print(f"{inst.name}: {inst.ptn.num_stations} stations, {len(inst.ptn.edges)} edges, "
          f"{len(inst.pool)} lines, {len(inst.demand)} OD pairs, "
          f"surrogate budget {surrogate_baseline_budget(inst):.1f}")
    return 0


def cmd_report(args) -> int:
    plan = json.loads(Path(args.plan).read_text())
    inst = _plan_instance(plan, args.instance)
    n = inst.cgn.num_arcs
    y = np.asarray(plan["plan"]["y"], dtype=float)
    x_so = _flows(plan, n)
    out = Path(args.out_dir)
    write_crowding_cdf(crowding_cdf(inst, y, x_so, kappa=args.kappa), out / "crowding_cdf.csv")
    decomp = objective_decomposition(inst, x_so, y)
    rows = {"so": decomp}
    gap = plan.get("so_ue")
    if args.flows:
        flows = json.loads(Path(args.flows).read_text())
        x_ue = _flows(flows, n)
        rows["ue"] = objective_decomposition(inst, x_ue, y)
        so_cost, ue_cost = rows["so"]["perceived"], rows["ue"]["perceived"]
        gap = {"so_system_cost": so_cost, "ue_system_cost": ue_cost,
               "relative_gap": (ue_cost - so_cost) / max(abs(so_cost), 1e-12)}
    path = out / "objective_decomposition.csv"
    write_rows(path, ["routing", "component", "value"],
               [(label, k, float(v)) for label, d in rows.items() for k, v in d.items()])
    if gap is not None:
        write_so_ue_gap(gap, out / "so_ue_gap.csv")
    print(f"wrote reports to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdplan", description="Line planning under crowding.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="optimize a line plan")
    s.add_argument("--instance", required=True)
    s.add_argument("--variant", choices=["fctp", "fptc", "apac"],
                   help="loop order (default fctp, or apac with --large)")
    s.add_argument("--gamma", type=float, help="override the default crowding factor")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--budget", type=float)
    g.add_argument("--budget-pct", type=float, help="budget as percent of the surrogate baseline")
    s.add_argument("--large", action="store_true", help="looser early stopping for big instances")
    s.add_argument("--time-limit", type=float)
    s.add_argument("--ue", action="store_true", help="also compute the equilibrium gap")
    s.add_argument("--tol-gap", type=float, default=1e-5)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="write a log file")
    s.set_defaults(func=cmd_solve)

    u = sub.add_parser("ue", help="user equilibrium for a solved plan")
    u.add_argument("--plan", required=True)
    u.add_argument("--instance")
    u.add_argument("--gamma", type=float)
    u.add_argument("--tol-gap", type=float, default=1e-5)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_ue)

    gg = sub.add_parser("gen-grid", help="generate a grid instance")
    gg.add_argument("--rows", type=int, default=5)
    gg.add_argument("--cols", type=int, default=5)
    gg.add_argument("--seed", type=int, default=0)
    gg.add_argument("--pool-size", type=int, default=128)
    gg.add_argument("--n-od", type=int, default=567)
    gg.add_argument("--demand", type=int, default=2547)
    gg.add_argument("--gamma", type=float, default=0.05)
    gg.add_argument("--out", required=True)
    gg.set_defaults(func=cmd_gen_grid)

    r = sub.add_parser("report", help="write CSV summaries of a solved plan")
    r.add_argument("--plan", required=True)
    r.add_argument("--flows", help="equilibrium flows from the ue command")
    r.add_argument("--instance")
    r.add_argument("--kappa", type=float, default=1.0)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = [logging.StreamHandler(sys.stderr)]
    if getattr(args, "log", None):
        handlers.append(logging.FileHandler(args.log))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", handlers=handlers)
    try:
        return args.func(args)
    except (ValidationError, InfeasibleInstance, UeError, FileNotFoundError) as err:
        log.error("%s", err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
