import copy

import numpy as np
import pytest

from gridmesh.builder import build_centralized
from gridmesh.case import case_from_dict, load_case
from gridmesh.daslr import DaslrOptions
from gridmesh.harness import (LOG_COLUMNS, CorruptLog, DelayModel, EventQueue, NoFeasibleFound, RunLog, RunOptions,
                              replay, run)
from gridmesh.milp import MilpOptions, get_solver

from test_case import minimal_doc


def opts(**kw):
    base = dict(max_iters=12, gap_tol=0.0, seed=7)
    base.update(kw)
    return RunOptions(**base)


@pytest.fixture(scope="module")
def mini2():
    return load_case("case_mini2")


@pytest.fixture(scope="module")
def seeded_run(mini2):
    return run(mini2, "daslr", opts(delay=DelayModel("uniform", low=0.5, high=2.0)))


def test_same_seed_gives_identical_log(mini2, seeded_run):
    again = run(mini2, "daslr", opts(delay=DelayModel("uniform", low=0.5, high=2.0)))
    assert again.log.to_csv() == seeded_run.log.to_csv()
    assert again.log.details_jsonl() == seeded_run.log.details_jsonl()


def test_log_columns_and_monotone_time(seeded_run):
    log = seeded_run.log
    assert log.to_csv().splitlines()[0] == ",".join(LOG_COLUMNS)
    times = [r["sim_time"] for r in log.rows]
    assert times == sorted(times)
    assert [r["event_seq"] for r in log.rows] == list(range(len(log.rows)))
    feas = [r["feasible_cost"] for r in log.rows]
    duals = [r["dual_bound"] for r in log.rows]
    assert all(b <= a for a, b in zip(feas, feas[1:]))
    assert all(b >= a for a, b in zip(duals, duals[1:]))
    for f, d in zip(feas, duals):
        assert d <= f + 1e-6


def test_total_compute_is_sum_of_delays(seeded_run):
    log = seeded_run.log
    draw = DelayModel("uniform", low=0.5, high=2.0).sampler(log.meta["mg_ids"], 7)
    want = 0.0
    for m, n in log.meta["starts"].items():
        for _ in range(n):
            want += draw(m)
    assert log.meta["total_compute"] == pytest.approx(want, rel=1e-14)
    finished = [r for r in log.rows if r["event"] in ("solve", "reject")]
    assert sum(log.meta["starts"].values()) >= len(finished)


def test_replay_verifies(seeded_run):
    rep = replay(seeded_run.log)
    assert rep.ok, str(rep)
    assert str(rep).startswith("verified, 0 mismatches")
    assert rep.updates == len(seeded_run.log.events("update"))


def test_replay_detects_perturbation(seeded_run):
    log = copy.deepcopy(seeded_run.log)
    updates = [d for d in log.details if d["kind"] == "update"]
    target = updates[len(updates) // 2]
    lam = np.array(target["lam_p"])
    idx = np.unravel_index(np.argmax(np.abs(lam)), lam.shape)
    lam[idx] += 1e-6
    target["lam_p"] = lam.tolist()
    rep = replay(log)
    assert not rep.ok
    assert rep.mismatches[0][0] == target["r"]


def test_replay_from_files(seeded_run, tmp_path):
    p_csv, _ = seeded_run.log.write(tmp_path)
    back = RunLog.read(p_csv)
    assert back.to_csv() == seeded_run.log.to_csv()
    assert replay(p_csv).ok


def test_corrupt_logs(tmp_path, seeded_run):
    p_csv, p_json = seeded_run.log.write(tmp_path)
    p_json.write_text("{broken")
    with pytest.raises(CorruptLog):
        RunLog.read(p_csv)
    p_json.write_text('{"kind": "update"}\n')
    with pytest.raises(CorruptLog):
        RunLog.read(p_csv)


def test_heterogeneous_delays_follow_hand_calendar(mini2):
    """MG1 takes 1 s per solve, MG2 takes 2.5 s; no broadcast latency.

    A worker restarts as soon as it finishes (after an accepted solve the
    coordinator's broadcast restarts it at the same instant; after a rejected
    one it re-solves directly), so finish times are fixed in advance:
      MG1 at 1, 2, 3, 4, 5, 6 and MG2 at 2.5, 5 (MG1 first on the tie at 5).
    A finish whose snapshot is still the latest broadcast is always accepted:
      t=1, 2 (MG1), 2.5 (MG2, first solution), 4, 5, 6 (MG1 started at 3, 4, 5
      with no update in between, provided t=3 was a reject).
    MG1 at 3 (snapshot v2, update at 2.5) and MG2 at 5 (snapshot v3) face the
    surrogate check and may go either way.
    """
    delay = DelayModel.parse("table:MG1=1,MG2=2.5")
    res = run(mini2, "daslr", opts(delay=delay, max_iters=6))
    fin = [(r["sim_time"], r["actor"], r["event"]) for r in res.log.rows if r["event"] in ("solve", "reject")]
    assert [(t, a) for t, a, _ in fin] == [(1.0, "MG1"), (2.0, "MG1"), (2.5, "MG2"), (3.0, "MG1"), (4.0, "MG1"),
                                          (5.0, "MG1"), (5.0, "MG2"), (6.0, "MG1")]
    kinds = [k for _, _, k in fin]
    assert kinds[:3] == ["solve"] * 3
    if kinds[3] == "reject":
        assert kinds[4] == kinds[5] == kinds[7] == "solve"
    updates = res.log.events("update")
    assert [u["r"] for u in updates] == list(range(1, len(updates) + 1))
    assert len(updates) == kinds.count("solve") == 6
    assert [s["r"] for s in res.log.events("search")] == [2, 4, 6]
    # never a barrier: MG1 keeps driving updates while MG2 is busy
    assert [u["sim_time"] for u in updates].count(2.0) == 1
    mg2_busy = [u for u in updates if 2.5 < u["sim_time"] < 5.0]
    assert len(mg2_busy) >= 1


def test_single_microgrid_terminates_immediately():
    case = case_from_dict(minimal_doc())
    standalone = get_solver("kernel").solve(build_centralized(case).model, MilpOptions(gap_tol=0.0)).objective
    for method in ("daslr", "admm", "centralized"):
        res = run(case, method, opts())
        assert res.feasible_cost == pytest.approx(standalone, rel=1e-9, abs=1e-9)
        assert len(res.log.events("solve")) == 1
        assert res.gap == pytest.approx(0.0, abs=1e-9)
    res = run(case, "daslr", opts())
    assert res.iterations == 1


def test_threaded_runner_matches_simulation(mini2, seeded_run):
    res = run(mini2, "daslr", opts(delay=DelayModel("uniform", low=0.5, high=2.0), threads=2))
    assert res.log.to_csv() == seeded_run.log.to_csv()


def test_no_feasible_found_carries_log():
    doc = minimal_doc()
    doc["microgrids"][0]["loads"]["1"]["p"] = [5.0]  # far above the generator, shedding capped at 0
    doc["microgrids"][0]["buses"][0].update(shed_p_max=0.0)
    case = case_from_dict(doc)
    with pytest.raises(NoFeasibleFound) as info:
        run(case, "daslr", opts(max_iters=2))
    assert info.value.log is not None


def test_admm_runs_on_mini2(mini2):
    res = run(mini2, "admm", opts(max_iters=5))
    assert res.log.method == "admm" and res.feasible_cost < float("inf")
    assert res.dual_bound <= res.feasible_cost + 1e-6
    rounds = [d for d in res.log.details if d["kind"] == "round"]
    assert len(rounds) == res.iterations


@pytest.mark.parametrize("text, want", [
    ("fixed:2", DelayModel("fixed", value=2.0)),
    ("uniform:0.5:2", DelayModel("uniform", low=0.5, high=2.0)),
    ("table:MG1=1,*=5", DelayModel("table", table=(("MG1", 1.0),), default=5.0)),
])
def test_delay_model_parse(text, want):
    assert DelayModel.parse(text) == want


@pytest.mark.parametrize("text", ["fixed:0", "uniform:2:1", "table:MG1=-1", "poisson:3", "uniform:x"])
def test_delay_model_rejects(text):
    with pytest.raises(ValueError):
        DelayModel.parse(text)


def test_uniform_streams_are_per_microgrid():
    d = DelayModel("uniform", low=0.5, high=2.0)
    a = d.sampler(["MG1", "MG2"], 3)
    b = d.sampler(["MG1", "MG2"], 3)
    xs = [a("MG1") for _ in range(3)]
    b("MG2")  # drawing for another microgrid must not shift MG1's stream
    assert [b("MG1") for _ in range(3)] == xs
    assert all(0.5 <= x <= 2.0 for x in xs)


def test_event_queue_tie_break():
    q = EventQueue()
    q.push(1.0, 1, "finished", "MG2")
    q.push(1.0, 0, "finished", "MG1")
    q.push(0.5, 1, "broadcast", "MG2")
    q.push(1.0, 0, "broadcast", "MG1")
    order = [(e.time, e.mg_id, e.kind) for e in (q.pop() for _ in range(4))]
    assert order == [(0.5, "MG2", "broadcast"), (1.0, "MG1", "finished"), (1.0, "MG1", "broadcast"),
                     (1.0, "MG2", "finished")]


def test_unknown_method():
    with pytest.raises(ValueError):
        RunOptions(method="gauss-seidel")


def test_daslr_reaches_small_gap_on_mini2(mini2):
    ref = get_solver("kernel").solve(build_centralized(mini2).model, MilpOptions(gap_tol=0.0)).objective
    res = run(mini2, "daslr", RunOptions(max_iters=40, gap_tol=0.01, seed=7))
    assert res.gap <= 0.01
    assert res.feasible_cost >= ref - 1e-6
    assert res.feasible_cost <= ref * 1.01
    assert res.dual_bound <= ref + 1e-6
