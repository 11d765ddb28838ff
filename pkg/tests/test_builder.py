import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridmesh.builder import (DimensionMismatch, EmptyGrid, MissingMultiplier, Schedule, SubproblemTemplate,
                              UnboundedFactor, build_centralized, build_subproblem, coupling_residual,
                              droop_injection, flow_conservation_residual, linearize_binary_product,
                              linearize_integer_product, mg_costs)
from gridmesh.case import case_from_dict, droop_grid, load_case, scale_loads, with_contribution_frac
from gridmesh.milp import MilpModel, MilpOptions, Status, get_solver, solve_lp, solve_milp

from test_case import minimal_doc


def _z_range(model, z):
    """min and max of column ``z`` over the LP feasible set of ``model``."""
    out = []
    for sign in (1.0, -1.0):
        for v in model.variables:
            v.obj = 0.0
        model.variables[z].obj = sign
        sol = solve_lp(model)
        assert sol.status is Status.OPTIMAL
        out.append(sign * sol.objective)
    return tuple(out)


def binary_instance(rng):
    lo = float(rng.uniform(-5, 2))
    hi = lo + float(rng.uniform(0, 6))
    a = float(rng.uniform(lo, hi))
    d = int(rng.integers(0, 2))
    m = MilpModel()
    A = m.add_var("A", lo, hi)
    D = m.add_var("d", 0, 1, kind="binary")
    z = linearize_binary_product(m, A, D, "p")
    m.variables[A].lower = m.variables[A].upper = a
    m.variables[D].lower = m.variables[D].upper = d
    return m, z, a * d


def integer_instance(rng):
    n = int(rng.integers(1, 8))
    grid = np.sort(rng.uniform(0.5, 50.0, n))
    lo = float(rng.uniform(-1, 0.5))
    hi = lo + float(rng.uniform(0, 2))
    a = float(rng.uniform(lo, hi))
    level = int(rng.integers(0, n))
    m = MilpModel()
    A = m.add_var("A", lo, hi)
    prod = linearize_integer_product(m, A, grid, "q")
    m.variables[A].lower = m.variables[A].upper = a
    for l, w in enumerate(prod.selectors):
        m.variables[w].lower = m.variables[w].upper = float(l == level)
    return m, prod, grid[level] * a, level


def test_linearization_500_random_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(250):
        m, z, want = binary_instance(rng)
        zmin, zmax = _z_range(m, z)
        worst = max(worst, abs(zmin - want), abs(zmax - want))
    for _ in range(250):
        m, prod, want, level = integer_instance(rng)
        zmin, zmax = _z_range(m, prod.z)
        worst = max(worst, abs(zmin - want), abs(zmax - want))
    assert worst <= 1e-9


@pytest.mark.parametrize("d, want", [(0, 0.0), (1, 3.7)])
def test_binary_product_examples(d, want):
    m = MilpModel()
    A = m.add_var("A", 0, 10)
    D = m.add_var("d", 0, 1, kind="binary")
    z = linearize_binary_product(m, A, D, "p")
    x = np.zeros(m.num_vars)
    x[A], x[D], x[z] = 3.7, d, want
    assert m.max_violation(x) == 0.0
    x[z] = want + 1e-3
    assert m.max_violation(x) > 0.0


def test_integer_product_selector_example():
    m = MilpModel()
    A = m.add_var("A", 0, 10)
    prod = linearize_integer_product(m, A, [1.0, 2.0, 3.0, 5.0], "q")
    m.variables[A].lower = m.variables[A].upper = 4.0
    for l, w in enumerate(prod.selectors):
        m.variables[w].lower = m.variables[w].upper = float(l == 2)
    assert _z_range(m, prod.z) == pytest.approx((12.0, 12.0), abs=1e-12)
    m.variables[prod.z].obj = 0.0
    sol = solve_milp(m)
    assert sol.values[prod.index] == pytest.approx(2.0)


def test_singleton_grid_is_plain_scaling():
    m = MilpModel()
    A = m.add_var("A", -1, 3)
    prod = linearize_integer_product(m, A, [2.5], "s")
    m.variables[A].lower = m.variables[A].upper = 1.2
    assert _z_range(m, prod.z) == pytest.approx((3.0, 3.0), abs=1e-12)


def test_linearization_errors():
    m = MilpModel()
    A = m.add_var("A", 0, math.inf)
    D = m.add_var("d", 0, 1, kind="binary")
    with pytest.raises(UnboundedFactor):
        linearize_binary_product(m, A, D)
    B = m.add_var("B", 0, 1)
    with pytest.raises(EmptyGrid):
        linearize_integer_product(m, B, [])


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 1), st.floats(0, 3))
def test_binary_product_relaxation_contains_product(a, d, width):
    """With d fixed integral the envelope pins z; the true product is always feasible."""
    m = MilpModel()
    A = m.add_var("A", min(a, 0) - width, max(a, 0) + width)
    D = m.add_var("d", 0, 1, kind="binary")
    z = linearize_binary_product(m, A, D)
    x = np.zeros(m.num_vars)
    x[A], x[D], x[z] = a, d, a * d
    assert m.max_violation(x) <= 1e-12


def test_droop_injection_example():
    case = load_case("case_mini2")
    mg = case.microgrids[0]
    der = next(d for d in mg.ders if d.dispatchable)
    f = mg.f_ref_hz - 0.5
    assert droop_injection(case, mg, der.id, 0.02, f) == pytest.approx(case.droop_p_scale * 25.0)


@pytest.mark.parametrize("seed", range(5))
def test_built_droop_matches_direct_evaluation(seed):
    """Fix frequency and droop level at random; Pdroop must equal the direct formula."""
    rng = np.random.default_rng(seed)
    case = load_case("case_mini2")
    built = build_centralized(case)
    m, vm = built.model, built.vmap
    mg = case.microgrids[int(rng.integers(0, len(case.microgrids)))]
    der = next(d for d in mg.ders if d.dispatchable)
    t = int(rng.integers(0, case.horizon))
    levels = [k for k in vm if k[0] == "wp" and k[1:4] == (t, mg.id, der.id)]
    level = int(rng.integers(0, len(levels)))
    m_p = droop_grid(der.droop, "p")[level]
    f_var = m.variables[vm.of("f", t, mg.id)]
    f = float(rng.uniform(f_var.lower, f_var.upper))
    f_var.lower = f_var.upper = f
    for k in levels:
        v = m.variables[vm[k]]
        v.lower = v.upper = float(k[4] == level)
    want = droop_injection(case, mg, der.id, m_p, f)
    cap = der.droop.contribution_frac * der.p_max
    col = vm.of("Pdroop", t, mg.id, der.id)
    for v in m.variables:
        v.obj = 0.0
    lo_hi = []
    for sign in (1.0, -1.0):
        m.variables[col].obj = sign
        sol = solve_lp(m)
        if sol.status is not Status.OPTIMAL:
            assert abs(want) > cap - 1e-9  # only infeasible when the cap binds
            return
        lo_hi.append(sign * sol.objective)
    assert lo_hi[0] == pytest.approx(want, abs=1e-9)
    assert lo_hi[1] == pytest.approx(want, abs=1e-9)


def test_zero_load_costs_nothing():
    case = scale_loads(load_case("case_mini2"), 0.0, renewables=0.0)
    sol = get_solver("kernel").solve(build_centralized(case).model, MilpOptions(gap_tol=0.0))
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_overload_sheds():
    case = scale_loads(load_case("case_mini2"), 2.0)
    built = build_centralized(case)
    sol = get_solver("highs").solve(built.model, MilpOptions(gap_tol=0.0))
    assert sol.status is Status.OPTIMAL
    sched = built.schedule(sol.values)
    shed = sum(v for k, v in sched.values.items() if k[0] in ("Pil", "Qil"))
    assert shed > 1e-6


def test_single_microgrid_has_no_coupling():
    case = case_from_dict(minimal_doc())
    built = build_centralized(case)
    assert not any(r.name.startswith("couple") for r in built.model.rows)
    assert not any(k[0] in ("Pbuy", "Psell") for k in built.vmap)


def _zero_lam(case):
    K = len(case.directed_interfaces())
    return np.zeros((case.horizon, K)), np.zeros((case.horizon, K))


def test_zero_multiplier_subproblems_sum_to_uncoupled_optimum():
    case = load_case("case_mini2")
    solver = get_solver("kernel")
    whole = solver.solve(build_centralized(case, coupling=False).model, MilpOptions(gap_tol=0.0))
    lp, lq = _zero_lam(case)
    parts = [solver.solve(build_subproblem(case, m, lp, lq).model, MilpOptions(gap_tol=0.0)).objective
             for m in case.mg_ids]
    assert whole.objective == pytest.approx(sum(parts), abs=1e-7)


def test_high_price_stops_buying():
    case = load_case("case_mini2")
    lp, lq = _zero_lam(case)
    lp[:] = 1e6
    built = build_subproblem(case, case.mg_ids[0], lp, lq)
    sol = get_solver("kernel").solve(built.model, MilpOptions(gap_tol=0.0))
    sched = built.schedule(sol.values)
    buys = [v for k, v in sched.values.items() if k[0] == "Pbuy"]
    assert buys and max(buys) <= 1e-9


def test_template_objective_folds_multipliers():
    case = load_case("case_mini2")
    tmpl = SubproblemTemplate(case, case.mg_ids[0])
    lp, lq = _zero_lam(case)
    np.testing.assert_array_equal(tmpl.objective(lp, lq), tmpl.base.c)
    lp[0, 0] = 3.0
    diff = tmpl.objective(lp, lq) - tmpl.base.c
    assert np.count_nonzero(diff) == 1 and abs(diff).sum() == 3.0


def test_multiplier_errors():
    case = load_case("case_mini2")
    lp, lq = _zero_lam(case)
    with pytest.raises(MissingMultiplier):
        build_subproblem(case, case.mg_ids[0], None, lq)
    with pytest.raises(MissingMultiplier):
        build_subproblem(case, case.mg_ids[0], lp[:, :1], lq)


@pytest.fixture(scope="module")
def mini2_optimum():
    case = load_case("case_mini2")
    built = build_centralized(case)
    sol = get_solver("kernel").solve(built.model, MilpOptions(gap_tol=0.0))
    return case, built, sol


def test_optimal_schedule_residuals(mini2_optimum):
    case, built, sol = mini2_optimum
    sched = built.schedule(sol.values)
    assert np.abs(flow_conservation_residual(case, sched)).max() <= 1e-6
    assert np.abs(coupling_residual(case, sched)).max() <= 1e-6
    costs = mg_costs(case, sched)
    assert sum(costs.values()) == pytest.approx(sol.objective, rel=1e-9, abs=1e-9)


def test_residual_localises_perturbation(mini2_optimum):
    case, built, sol = mini2_optimum
    sched = built.schedule(sol.values)
    mg = case.microgrids[0]
    der = next(d for d in mg.ders if d.dispatchable)
    vals = dict(sched.values)
    vals[("Pg", 0, mg.id, der.id)] += 0.1
    res = flow_conservation_residual(case, Schedule(sched.horizon, vals, sched.objective, sched.mg_ids))
    base = flow_conservation_residual(case, sched)
    delta = res - base
    bus_idx = [b.id for b in mg.buses].index(der.bus)
    assert delta[0, bus_idx, 0] == pytest.approx(0.1)
    delta[0, bus_idx, 0] = 0.0
    assert np.abs(delta).max() == 0.0


def test_residual_horizon_mismatch(mini2_optimum):
    case, built, sol = mini2_optimum
    sched = built.schedule(sol.values)
    with pytest.raises(DimensionMismatch):
        flow_conservation_residual(case, Schedule(sched.horizon + 1, sched.values, 0.0))


def test_exchange_exclusivity_and_distflow(mini2_optimum):
    case, built, sol = mini2_optimum
    sched = built.schedule(sol.values)
    for (sym, t, m, nb), u in ((k, v) for k, v in sched.values.items() if k[0] == "ubuy"):
        assert sched.get("Pbuy", t, m, nb) <= 1e-7 or sched.get("Psell", t, m, nb) <= 1e-7
    for mg in case.microgrids:
        for t in range(case.horizon):
            for parent, child, line in mg.tree():
                vp, vc = sched.get("V", t, mg.id, parent), sched.get("V", t, mg.id, child)
                p, q = sched.get("Pflow", t, mg.id, parent, child), sched.get("Qflow", t, mg.id, parent, child)
                v0 = mg.pcc_voltage_pu
                assert vp - vc == pytest.approx((line.r_pu * p + line.x_pu * q) / v0, abs=1e-7)


def test_larger_contribution_never_costs_more():
    case = load_case("case_mini2")
    solver = get_solver("highs")
    costs = []
    for frac in (0.1, 0.2, 0.3):
        c = with_contribution_frac(case, frac)
        costs.append(solver.solve(build_centralized(c).model, MilpOptions(gap_tol=0.0)).objective)
    assert costs[0] >= costs[1] - 1e-7 >= costs[2] - 2e-7
