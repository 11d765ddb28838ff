import csv
import json

import pytest

from gridmesh.builder import build_centralized
from gridmesh.case import load_case, with_contribution_frac
from gridmesh.cli import PRESETS, TRACE_COLUMNS, main
from gridmesh.harness import RunLog
from gridmesh.milp import MilpOptions, get_solver

SUMMARY_KEYS = {"method", "case", "seed", "iterations", "feasible_cost", "dual_bound", "gap", "per_mg_costs"}


def centralized(case):
    return get_solver("kernel").solve(build_centralized(case).model, MilpOptions(gap_tol=0.0)).objective


@pytest.fixture(scope="module")
def mini2_opt():
    return centralized(load_case("case_mini2"))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_centralized_passthrough(tmp_path, mini2_opt):
    assert main(["solve", "--case", "case_mini2", "--method", "centralized", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert SUMMARY_KEYS <= set(summary)
    assert summary["feasible_cost"] == pytest.approx(mini2_opt, rel=1e-6)
    rows = read_csv(tmp_path / "schedule.csv")
    assert rows and set(rows[0]) == {"t", "mg", "symbol", "entity", "value"}
    assert (tmp_path / "runlog.csv").exists()


def test_solve_daslr_close_to_centralized(tmp_path, mini2_opt):
    code = main(["solve", "--case", "case_mini2", "--method", "daslr", "--gap-tol", "0.01", "--seed", "7",
                 "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["gap"] <= 0.01
    assert abs(summary["feasible_cost"] - mini2_opt) <= 0.01 * mini2_opt
    assert sum(summary["per_mg_costs"].values()) == pytest.approx(summary["feasible_cost"], rel=1e-9)
    trace = read_csv(tmp_path / "trace.csv")
    log = RunLog.read(tmp_path / "runlog.csv")
    assert len(trace) == len(log.events("search"))
    assert main(["replay", str(tmp_path / "runlog.csv")]) == 0


@pytest.mark.parametrize("argv", [
    ["solve", "--case", "case_mini2", "--method", "newton"],
    ["solve", "--case", "no_such_case"],
    ["solve", "--case", "case_mini2", "--delay-model", "poisson:2"],
    ["solve", "--case", "case_mini2", "--max-iters", "many"],
    ["frobnicate"],
])
def test_input_errors_exit_1(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] == "solve" else argv) == 1
    assert capsys.readouterr().err


def test_replay_of_corrupt_log_exits_1(tmp_path):
    p = tmp_path / "runlog.csv"
    p.write_text("nonsense\n")
    assert main(["replay", str(p)]) == 1


def test_infeasible_case_exits_2(tmp_path):
    doc_path = tmp_path / "bad.json"
    from test_case import minimal_doc
    doc = minimal_doc()
    doc["microgrids"][0]["loads"]["1"]["p"] = [5.0]
    doc_path.write_text(json.dumps(doc))
    assert main(["solve", "--case", str(doc_path), "--method", "centralized", "--out", str(tmp_path)]) == 2


def test_compare_table(tmp_path):
    code = main(["compare", "--case", "case_mini2", "--max-iters", "12", "--seed", "7", "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert [r["method"] for r in rows] == ["daslr", "admm"]
    mgs = load_case("case_mini2").mg_ids
    for r in rows:
        if r["total"]:
            assert float(r["total"]) == pytest.approx(sum(float(r[m]) for m in mgs), rel=1e-12)
    text = (tmp_path / "compare.txt").read_text()
    assert "ADMM baseline" in text and "daslr" in text
    for m in ("daslr", "admm"):
        trace = read_csv(tmp_path / f"trace_{m}.csv")
        log = RunLog.read(tmp_path / f"runlog_{m}.csv")
        assert len(trace) == len(log.events("search"))
        assert list(trace[0]) == list(TRACE_COLUMNS)


def test_sweep_identical_fractions(tmp_path):
    assert main(["sweep-droop", "--case", "case_mini2", "--method", "centralized", "--fractions", "0.2,0.2",
                 "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert [float(r["reduction"]) for r in rows] == [0.0, 0.0]


def test_sweep_matches_independent_solves(tmp_path):
    assert main(["sweep-droop", "--case", "case_mini2", "--method", "centralized", "--fractions", "0.2,0.3",
                 "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    base = load_case("case_mini2")
    a, b = (centralized(with_contribution_frac(base, f)) for f in (0.2, 0.3))
    assert float(rows[0]["total"]) == pytest.approx(a, rel=1e-6)
    assert float(rows[1]["total"]) == pytest.approx(b, rel=1e-6)
    assert float(rows[1]["reduction"]) == pytest.approx((a - b) / a, abs=1e-6)
    assert b <= a + 1e-7


def test_presets_reference_bundled_cases(capsys):
    from gridmesh.case import BUNDLED
    for p in PRESETS.values():
        assert p.case in BUNDLED
        assert p.fractions
    assert main(["presets"]) == 0
    assert "case33-reduced" in capsys.readouterr().out
