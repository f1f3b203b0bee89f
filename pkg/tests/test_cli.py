import json

import pytest

from crowdplan.cli import main
from crowdplan.instances import load_instance


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    inst = d / "grid.json"
    plan = d / "plan.json"
    assert main(["gen-grid", "--rows", "3", "--cols", "3", "--pool-size", "12", "--n-od", "30",
                 "--demand", "200", "--seed", "4", "--out", str(inst)]) == 0
    assert main(["solve", "--instance", str(inst), "--budget-pct", "130", "--ue",
                 "--out", str(plan), "--log", str(d / "run.log")]) == 0
    return d, inst, plan


def test_gen_grid_writes_valid_instance(solved):
    _, inst, _ = solved
    g = load_instance(inst)
    assert g.ptn.num_stations == 9 and len(g.pool) == 12 and len(g.demand) == 30


def test_solve_writes_plan(solved):
    d, _, plan = solved
    data = json.loads(plan.read_text())
    assert set(data) >= {"plan", "arc_flows", "route_flows", "run", "instance_data", "so_ue"}
    run = data["run"]
    assert run["root_bound"] <= run["true_objective"] * (1 + 1e-9)
    assert data["so_ue"]["relative_gap"] >= -1e-6
    assert (d / "run.log").exists()


def test_ue_and_report(solved, capsys):
    d, _, plan = solved
    ue = d / "ue.json"
    assert main(["ue", "--plan", str(plan), "--out", str(ue)]) == 0
    assert "equilibrium gap" in capsys.readouterr().out
    data = json.loads(ue.read_text())
    assert data["gap"] <= 1e-5
    out = d / "reports"
    assert main(["report", "--plan", str(plan), "--flows", str(ue), "--out-dir", str(out)]) == 0
    for name in ("crowding_cdf.csv", "objective_decomposition.csv", "so_ue_gap.csv"):
        assert (out / name).exists()
    rows = (out / "objective_decomposition.csv").read_text().splitlines()
    assert rows[0] == "routing,component,value"
    assert any(r.startswith("ue,") for r in rows)


def test_variants_and_gamma_override(solved):
    d, inst, _ = solved
    for v in ("fptc", "apac"):
        out = d / f"plan_{v}.json"
        assert main(["solve", "--instance", str(inst), "--variant", v, "--gamma", "0.1",
                     "--budget-pct", "130", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["gamma"] == 0.1


def test_errors_exit_with_code_2(tmp_path):
    assert main(["solve", "--instance", str(tmp_path / "missing.json"), "--out",
                 str(tmp_path / "p.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"stations": []}))
    assert main(["solve", "--instance", str(bad), "--out", str(tmp_path / "p.json")]) == 2
    with pytest.raises(SystemExit):
        main(["solve"])
