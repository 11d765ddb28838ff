import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridmesh.builder import build_centralized
from gridmesh.case import case_from_dict, case_to_dict, load_case
from gridmesh.daslr import (ARRIVAL_FIELDS, Arrival, DaslrOptions, NoFeasibleYet, Restorer, StaleActorError,
                            SubproblemSolver, averaged_exchanges, direction_fixing, dual_value, gamma_schedule, gap, new_state,
                            restore_feasibility, surrogate_stepsize, update_multipliers, violation)
from gridmesh.milp import MilpOptions, get_solver

from small_cases import chain_case


def arrival(mg, values, version=0):
    return Arrival(mg, tuple(sorted(values.items())), version)


def test_zero_violation_leaves_multipliers():
    case = chain_case(horizon=1)
    st_ = new_state(case)
    update_multipliers(st_, case, arrival("MG1", {}))
    assert st_.r == 1 and st_.e is None
    assert not st_.lam_p.any() and not st_.lam_q.any()


def test_single_interface_example():
    case = chain_case(loads=(0.2, 0.2), prices=(0.1, 0.1), horizon=1)
    st_ = new_state(case, DaslrOptions(e0=1.0))
    update_multipliers(st_, case, arrival("MG2", {("Psell", 0, "MG1"): 0.3}), DaslrOptions(e0=1.0))
    update_multipliers(st_, case, arrival("MG1", {("Pbuy", 0, "MG2"): 0.5}), DaslrOptions(e0=1.0))
    # the first arrival already moved lambda by -0.3 with e = 1; then e shrinks by the stepsize law
    k = case.directed_interfaces().index(("MG1", "MG2"))
    first = -0.3
    assert st_.lam_p[0, k] == pytest.approx(first + st_.e * 0.2)


def test_single_interface_example_from_zero():
    case = chain_case(loads=(0.2, 0.2), prices=(0.1, 0.1), horizon=1)
    st_ = new_state(case)
    st_.latest["MG2"] = {("Psell", 0, "MG1"): 0.3}  # already in the ledger, no step taken for it
    opts = DaslrOptions(e0=1.0)
    update_multipliers(st_, case, arrival("MG1", {("Pbuy", 0, "MG2"): 0.5}), opts)
    k = case.directed_interfaces().index(("MG1", "MG2"))
    assert st_.lam_p[0, k] == pytest.approx(0.2)
    assert np.count_nonzero(st_.lam_p) == 1 and not st_.lam_q.any()


def test_stepsize_examples():
    st_ = new_state(chain_case(horizon=1))
    st_.e, st_.last_violation_norm, st_.steps = 1.0, 2.0, 1
    st_.gamma_params = (2.0, 0.0, 0.01, 0.999)  # gamma(1) = 1 - 1/2 = 0.5
    assert surrogate_stepsize(st_, 2.0) == pytest.approx(0.5)
    st_.e, st_.last_violation_norm = 1.0, 1.0
    st_.gamma_params = (10.0, 0.0, 0.01, 0.999)  # gamma(1) = 0.9
    assert surrogate_stepsize(st_, 2.0) == pytest.approx(0.45)
    with pytest.raises(ValueError):
        surrogate_stepsize(st_, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10_000), st.floats(1.01, 500), st.floats(0.0, 0.5))
def test_gamma_schedule_in_bounds(r, M, p):
    g = gamma_schedule(r, M, p, 0.01, 0.999)
    assert 0.01 <= g <= 0.999


def test_three_mg_ledger_uses_stamped_values():
    """MG1's fresh values meet MG2 and MG3's stale ones; hand ledger below."""
    case = chain_case(horizon=1)
    directed = case.directed_interfaces()  # (1,2) (2,1) (2,3) (3,2)
    opts = DaslrOptions(e0=0.5, M=10.0, p=0.0)
    st_ = new_state(case, opts)
    msgs = [
        arrival("MG2", {("Psell", 0, "MG1"): 0.1, ("Pbuy", 0, "MG3"): 0.2}),
        arrival("MG3", {("Psell", 0, "MG2"): 0.05}),
        arrival("MG1", {("Pbuy", 0, "MG2"): 0.3}),
        arrival("MG1", {("Pbuy", 0, "MG2"): 0.1}),
    ]
    # hand ledger: g over (1<-2, 2<-1, 2<-3, 3<-2) after each arrival
    gs = [np.array([-0.1, 0, 0.2, 0]), np.array([-0.1, 0, 0.15, 0]), np.array([0.2, 0, 0.15, 0]),
          np.array([0.0, 0, 0.15, 0])]
    lam = np.zeros(4)
    e, prev = None, None
    for step, (msg, g) in enumerate(zip(msgs, gs)):
        update_multipliers(st_, case, msg, opts)
        n = float(np.linalg.norm(g))
        if e is None:
            e = 0.5
        else:
            gamma = 0.9  # p = 0 makes the schedule constant at 1 - 1/M
            e = gamma * e * prev / n
        prev = n
        lam = lam + e * g
        np.testing.assert_allclose(st_.lam_p[0], lam, rtol=0, atol=1e-15)
        np.testing.assert_allclose(violation(case, st_.latest)[0][0], g, atol=1e-15)
    assert [directed[k] for k in range(4)] == [("MG1", "MG2"), ("MG2", "MG1"), ("MG2", "MG3"), ("MG3", "MG2")]
    assert st_.stamps == {"MG1": 3, "MG2": 0, "MG3": 1}


def test_unknown_actor_rejected():
    case = chain_case(horizon=1)
    with pytest.raises(StaleActorError):
        update_multipliers(new_state(case), case, arrival("MG9", {}))


def test_arrival_carries_no_private_values():
    assert ARRIVAL_FIELDS == {"mg_id", "exchange", "lam_version", "resolves", "status", "sim_compute"}
    private = ("Pg", "Qg", "ug", "Pch", "Pdch", "Pil", "Qil", "Pdroop", "wp", "V", "f")
    case = load_case("case_mini2")
    lam = np.zeros((case.horizon, len(case.directed_interfaces())))
    from gridmesh.daslr import make_arrival
    sched, *_ = SubproblemSolver(case, "MG1").solve(lam, lam)
    msg = make_arrival("MG1", sched, 0)
    assert msg.exchange and all(k[0] not in private for k, _ in msg.exchange)


def test_averaging_rule():
    case = chain_case(loads=(0.2, 0.2), horizon=1)
    latest = {"MG1": {("Pbuy", 0, "MG2"): 0.4, ("Qbuy", 0, "MG2"): 0.1},
              "MG2": {("Psell", 0, "MG1"): 0.2, ("Qsell", 0, "MG1"): 0.05}}
    fix = averaged_exchanges(case, latest)
    assert fix[("Pbuy", 0, "MG1", "MG2")] == pytest.approx(0.3)
    assert fix[("Psell", 0, "MG2", "MG1")] == pytest.approx(0.3)
    assert fix[("Qbuy", 0, "MG1", "MG2")] == pytest.approx(0.075)
    assert fix[("ubuy", 0, "MG1", "MG2")] == 1.0 and fix[("ubuy", 0, "MG2", "MG1")] == 0.0
    assert averaged_exchanges(case, latest, 1.0)[("Pbuy", 0, "MG1", "MG2")] == pytest.approx(0.4)
    assert averaged_exchanges(case, latest, 0.0)[("Pbuy", 0, "MG1", "MG2")] == pytest.approx(0.2)


def test_averaging_nets_opposite_flows():
    case = chain_case(loads=(0.2, 0.2), horizon=1)
    latest = {"MG1": {("Pbuy", 0, "MG2"): 0.1, ("Psell", 0, "MG2"): 0.3},
              "MG2": {("Psell", 0, "MG1"): 0.1, ("Pbuy", 0, "MG1"): 0.3}}
    fix = averaged_exchanges(case, latest)
    assert fix[("Pbuy", 0, "MG2", "MG1")] == pytest.approx(0.2)
    assert fix[("Pbuy", 0, "MG1", "MG2")] == 0.0


@pytest.fixture(scope="module")
def mini2():
    case = load_case("case_mini2")
    built = build_centralized(case)
    sol = get_solver("kernel").solve(built.model, MilpOptions(gap_tol=0.0))
    return case, built, sol


def test_restoring_a_consistent_point_reproduces_it(mini2):
    case, built, sol = mini2
    sched = built.schedule(sol.values)
    st_ = new_state(case)
    for m in case.mg_ids:
        st_.latest[m] = {(k[0], k[1], k[3]): v for k, v in sched.exchange(m).items()}
    cost, _ = restore_feasibility(st_, case)
    assert cost == pytest.approx(sol.objective, rel=1e-6)
    assert st_.best_cost == cost


@pytest.mark.parametrize("seed", range(3))
def test_restored_cost_never_beats_optimum(mini2, seed):
    case, built, sol = mini2
    rng = np.random.default_rng(seed)
    st_ = new_state(case)
    workers = {m: SubproblemSolver(case, m) for m in case.mg_ids}
    lam = rng.uniform(0, 2 * case.cost_per_pu(0.1), st_.lam_p.shape)
    for m in case.mg_ids:
        sched, *_ = workers[m].solve(lam, np.zeros_like(lam))
        st_.latest[m] = {(k[0], k[1], k[3]): v for k, v in sched.exchange(m).items()}
    res = restore_feasibility(st_, case, Restorer(case))
    if res is not None:
        assert res[0] >= sol.objective - 1e-6


def test_direction_only_fixing_recovers_optimum_from_wrong_magnitudes(mini2):
    case, built, sol = mini2
    sched = built.schedule(sol.values)
    st_ = new_state(case)
    for m in case.mg_ids:
        st_.latest[m] = {(k[0], k[1], k[3]): 0.5 * v for k, v in sched.exchange(m).items()}
    fix = averaged_exchanges(case, st_.latest)
    kept = direction_fixing(fix)
    assert all(k[0] == "ubuy" or v == 0.0 for k, v in kept.items())
    assert {k for k in fix if k[0] == "ubuy"} <= set(kept)
    plain = restore_feasibility(st_, case)
    both = restore_feasibility(st_, case, directions=True)
    assert both[0] <= plain[0] + 1e-9
    assert both[0] == pytest.approx(sol.objective, rel=1e-6)


def test_dual_value_weak_duality_and_monotone(mini2):
    case, built, sol = mini2
    st_ = new_state(case)
    workers = {m: SubproblemSolver(case, m, opts=MilpOptions(gap_tol=0.0)) for m in case.mg_ids}
    rng = np.random.default_rng(4)
    history = []
    for _ in range(4):
        st_.lam_p = rng.uniform(-500, 500, st_.lam_p.shape)
        st_.lam_q = rng.uniform(-500, 500, st_.lam_q.shape)
        q = dual_value(st_, case, workers)
        assert q <= sol.objective + 1e-6
        history.append(st_.dual_bound)
    assert history == sorted(history)


def test_dual_at_zero_equals_optimum_without_useful_exchange():
    doc = case_to_dict(load_case("case_mini2"))
    for link in doc["interfaces"]:
        for key in ("p_buy_max", "p_sell_max", "q_buy_max", "q_sell_max"):
            link[key] = 0.0
    case = case_from_dict(doc)
    opt = get_solver("kernel").solve(build_centralized(case).model, MilpOptions(gap_tol=0.0)).objective
    st_ = new_state(case)
    workers = {m: SubproblemSolver(case, m, opts=MilpOptions(gap_tol=0.0)) for m in case.mg_ids}
    assert dual_value(st_, case, workers) == pytest.approx(opt, rel=1e-9, abs=1e-9)


def test_gap_examples():
    st_ = new_state(chain_case(horizon=1))
    with pytest.raises(NoFeasibleYet):
        gap(st_)
    st_.best_feasible = (100.0, None)
    st_.dual_bound = 99.0
    assert gap(st_) == pytest.approx(0.01)
    st_.dual_bound = 100.0
    assert gap(st_) == 0.0


def test_lagrangian_matches_solver_objective(mini2):
    case, _, _ = mini2
    rng = np.random.default_rng(1)
    lam_p = rng.uniform(0, 200, (case.horizon, len(case.directed_interfaces())))
    lam_q = rng.uniform(0, 50, lam_p.shape)
    w = SubproblemSolver(case, "MG2")
    sched, obj, bound, _ = w.solve(lam_p, lam_q)
    assert w.lagrangian(sched, lam_p, lam_q) == pytest.approx(obj, rel=1e-9, abs=1e-9)
    assert bound <= obj + 1e-9
