"""DA-SLR coordinator: multipliers, surrogate stepsize, restoration, bounds.

The coordinator only ever sees :class:`Arrival` messages, which carry a
microgrid's exchange quantities and solve metadata.  Multipliers are indexed
``[t, k]`` over ``case.directed_interfaces()``: entry ``k = (buyer, seller)``
prices ``Pbuy[buyer<-seller] - Psell[seller->buyer]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .builder import (EXCHANGE_SYMBOLS, BuiltModel, Schedule, SubproblemTemplate, build_centralized)
from .case import NetworkCase
from .milp import MilpOptions, Solver, Status, get_solver
from .milp.bnb import components


class StaleActorError(KeyError):
    pass


class NoFeasibleYet(RuntimeError):
    pass


class SubproblemFailed(RuntimeError):
    """A local model has no solution at any multipliers (infeasible) or the solver gave up."""


@dataclass
class DaslrOptions:
    max_iters: int = 60
    gap_tol: float = 0.002
    M: float = 20.0
    p: float = 0.04
    gamma_min: float = 0.01
    gamma_max: float = 0.999
    c0: float = 0.1
    cost_scale: float | None = None  # None: derived from generation prices
    e0: float | None = None          # explicit first stepsize (overrides c0 * cost_scale / |g|)
    search_every: int | None = None  # None: number of microgrids
    solver: str = "kernel"
    sub_gap: float = 1e-4            # relative MIP gap for every subproblem / restoration solve
    node_limit: int = 20_000
    restore_directions: bool = False  # extra restoration candidate: fix flow directions only


def gamma_schedule(r: int, M: float, p: float, lo: float, hi: float) -> float:
    """``1 - 1/(M r^(1 - 1/r^p))`` clamped to ``[lo, hi]``; ``r >= 1``."""
    r = max(int(r), 1)
    g = 1.0 - 1.0 / (M * r ** (1.0 - 1.0 / r ** p))
    return min(max(g, lo), hi)


@dataclass(frozen=True)
class Arrival:
    """Worker -> coordinator message: exchange quantities and solve metadata only."""

    mg_id: str
    exchange: tuple[tuple[tuple, float], ...]  # ((symbol, t, neighbour), value)
    lam_version: int                            # coordinator iteration of the lambda snapshot used
    resolves: int = 0                           # surrogate-condition rejections before acceptance
    status: str = "Optimal"
    sim_compute: float = 0.0

    def as_dict(self) -> dict[tuple, float]:
        return dict(self.exchange)


ARRIVAL_FIELDS = frozenset(Arrival.__dataclass_fields__)


def make_arrival(mg_id: str, schedule: Schedule, lam_version: int, **meta) -> Arrival:
    ex = tuple(sorted(((k[0], k[1], k[3]), v) for k, v in schedule.exchange(mg_id).items()))
    return Arrival(mg_id, ex, lam_version, **meta)


@dataclass
class CoordinatorState:
    lam_p: np.ndarray
    lam_q: np.ndarray
    e: float | None = None
    gamma_params: tuple[float, float, float, float] = (20.0, 0.04, 0.01, 0.999)
    last_violation_norm: float | None = None
    latest: dict[str, dict[tuple, float]] = field(default_factory=dict)
    stamps: dict[str, int] = field(default_factory=dict)
    best_feasible: tuple[float, Schedule] | None = None
    dual_bound: float = -math.inf
    r: int = 0
    steps: int = 0           # number of stepsize updates (nonzero-violation iterations)
    last_gamma: float | None = None
    last_g: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def best_cost(self) -> float:
        return self.best_feasible[0] if self.best_feasible else math.inf


def new_state(case: NetworkCase, opts: DaslrOptions | None = None) -> CoordinatorState:
    opts = opts or DaslrOptions()
    K = len(case.directed_interfaces())
    st = CoordinatorState(np.zeros((case.horizon, K)), np.zeros((case.horizon, K)),
                          gamma_params=(opts.M, opts.p, opts.gamma_min, opts.gamma_max))
    for m in case.mg_ids:
        st.latest[m] = {}
        st.stamps[m] = -1
    return st


def violation(case: NetworkCase, latest: dict[str, dict[tuple, float]]) -> tuple[np.ndarray, np.ndarray]:
    """g_p, g_q of shape (T, K) from the stamped latest exchange values (missing -> 0)."""
    directed = case.directed_interfaces()
    gp = np.zeros((case.horizon, len(directed)))
    gq = np.zeros_like(gp)
    for k, (b, s) in enumerate(directed):
        lb, ls = latest.get(b, {}), latest.get(s, {})
        for t in range(case.horizon):
            gp[t, k] = lb.get(("Pbuy", t, s), 0.0) - ls.get(("Psell", t, b), 0.0)
            gq[t, k] = lb.get(("Qbuy", t, s), 0.0) - ls.get(("Qsell", t, b), 0.0)
    return gp, gq


def violation_norm(gp: np.ndarray, gq: np.ndarray) -> float:
    return float(np.sqrt(np.sum(gp * gp) + np.sum(gq * gq)))


def default_cost_scale(case: NetworkCase) -> float:
    """Mean dispatchable marginal cost per p.u.-period times sqrt(number of multipliers)."""
    prices = [d.gen_price for mg in case.microgrids for d in mg.ders if d.dispatchable]
    price = float(np.mean(prices)) if prices else case.prices.shed_price
    dim = 2 * case.horizon * len(case.directed_interfaces())
    return case.cost_per_pu(price) * math.sqrt(max(dim, 1))


def surrogate_stepsize(state: CoordinatorState, g_norm: float) -> float:
    """Advance ``e`` by ``e^r = gamma^r e^(r-1) |g^(r-1)| / |g^r|`` and store ``|g^r|``."""
    if g_norm <= 0:
        raise ValueError("surrogate_stepsize needs a nonzero violation")
    M, p, lo, hi = state.gamma_params
    gamma = gamma_schedule(state.steps, M, p, lo, hi)
    state.e = gamma * state.e * state.last_violation_norm / g_norm
    state.last_violation_norm = g_norm
    state.last_gamma = gamma
    return state.e


def update_multipliers(state: CoordinatorState, case: NetworkCase, arrival: Arrival,
                       opts: DaslrOptions | None = None) -> CoordinatorState:
    """Patch the ledger with ``arrival``, then ``lambda += e^r g`` over every component."""
    opts = opts or DaslrOptions()
    if arrival.mg_id not in state.latest:
        raise StaleActorError(f"unknown microgrid {arrival.mg_id!r}")
    state.latest[arrival.mg_id] = arrival.as_dict()
    state.stamps[arrival.mg_id] = state.r
    gp, gq = violation(case, state.latest)
    norm = violation_norm(gp, gq)
    state.last_g = (gp, gq)
    state.last_gamma = None
    if norm > 0:
        if state.e is None:
            if opts.e0 is not None:
                state.e = float(opts.e0)
            else:
                scale = opts.cost_scale if opts.cost_scale is not None else default_cost_scale(case)
                state.e = opts.c0 * scale / norm
            state.last_violation_norm = norm
        else:
            state.steps += 1
            surrogate_stepsize(state, norm)
        state.lam_p = state.lam_p + state.e * gp
        state.lam_q = state.lam_q + state.e * gq
    state.r += 1
    return state


# --- subproblem solves ------------------------------------------------------------

class SubproblemSolver:
    """Per-microgrid solver bound to a case slice; holds no coordinator state."""

    def __init__(self, case: NetworkCase, mg_id: str, solver: str | Solver = "kernel",
                 opts: MilpOptions | None = None):
        self.template = SubproblemTemplate(case, mg_id)
        self.solver = get_solver(solver)
        self.opts = opts or MilpOptions(gap_tol=1e-4)
        self.mg_id = mg_id

    def solve(self, lam_p, lam_q):
        """Returns ``(schedule, lagrangian_value, lower_bound, status)``."""
        arr = self.template.arrays(lam_p, lam_q)
        sol = self.solver.solve_arrays(arr, self.opts)
        if sol.status not in (Status.OPTIMAL, Status.ITER_LIMIT) or sol.values.size == 0 \
                or not math.isfinite(sol.objective):
            raise SubproblemFailed(f"subproblem {self.mg_id} failed: {sol.status.value}")
        sched = self.template.built.schedule(sol.values, sol.objective)
        return sched, sol.objective, sol.bound, sol.status

    def lagrangian(self, schedule: Schedule, lam_p, lam_q) -> float:
        c = self.template.objective(lam_p, lam_q)
        x = np.zeros(c.size)
        for key, h in self.template.vmap.items():
            x[h] = schedule.values.get(key, 0.0)
        return float(c @ x)


def averaged_exchanges(case: NetworkCase, latest: dict[str, dict[tuple, float]],
                       buyer_weight: float = 0.5) -> dict[tuple, float]:
    """Coupling-consistent exchange fixings from the two sides' latest values.

    Each direction is set to ``w * buyer + (1 - w) * seller`` (``w = 0.5`` is
    the plain average); when both directions of a link end up positive only
    the net flow is kept; the reactive exchange must follow the real-power
    direction (it is clipped to zero otherwise).  Keys are
    ``(symbol, t, mg, neighbour)``.
    """
    w = float(buyer_weight)
    fix: dict[tuple, float] = {}
    for link in case.interfaces:
        a, b = link.mg_a, link.mg_b
        la, lb = latest.get(a, {}), latest.get(b, {})
        for t in range(case.horizon):
            p_ab = w * la.get(("Pbuy", t, b), 0.0) + (1 - w) * lb.get(("Psell", t, a), 0.0)  # a buys from b
            p_ba = w * lb.get(("Pbuy", t, a), 0.0) + (1 - w) * la.get(("Psell", t, b), 0.0)
            q_ab = w * la.get(("Qbuy", t, b), 0.0) + (1 - w) * lb.get(("Qsell", t, a), 0.0)
            q_ba = w * lb.get(("Qbuy", t, a), 0.0) + (1 - w) * la.get(("Qsell", t, b), 0.0)
            p_net, q_net = p_ab - p_ba, q_ab - q_ba
            a_buys = p_net > 0 or (p_net == 0 and q_net > 0)
            pa = max(p_net, 0.0) if a_buys else max(-p_net, 0.0)
            qa = max(q_net, 0.0) if a_buys else max(-q_net, 0.0)
            buyer, seller = (a, b) if a_buys else (b, a)
            fix[("ubuy", t, buyer, seller)] = 1.0
            fix[("ubuy", t, seller, buyer)] = 0.0
            fix[("Pbuy", t, buyer, seller)] = pa
            fix[("Psell", t, seller, buyer)] = pa
            fix[("Qbuy", t, buyer, seller)] = qa
            fix[("Qsell", t, seller, buyer)] = qa
            fix[("Psell", t, buyer, seller)] = 0.0
            fix[("Qsell", t, buyer, seller)] = 0.0
            fix[("Pbuy", t, seller, buyer)] = 0.0
            fix[("Qbuy", t, seller, buyer)] = 0.0
    return fix


RESTORE_WEIGHTS = (0.5, 1.0, 0.0)  # averaged, buyer-side, seller-side


def direction_fixing(fix: dict[tuple, float]) -> dict[tuple, float]:
    """Keeps only the direction of each fixing: binaries and the zeroed opposite flows.

    The exchanged magnitudes are left to the restoration solve, which then
    optimises the coupled period problem under the chosen directions.
    """
    return {k: v for k, v in fix.items() if k[0] == "ubuy" or v == 0.0}


class Restorer:
    """Solves the coupled problem with every exchange fixed.

    With no inter-temporal coupling the fixed problem splits by period, so
    each period is solved on its own and, when several candidate fixings are
    given, the cheapest feasible one is kept period by period.
    """

    def __init__(self, case: NetworkCase, solver: str | Solver = "kernel", opts: MilpOptions | None = None):
        self.case = case
        self.built: BuiltModel = build_centralized(case)
        self.base = self.built.model.arrays()
        self.solver = get_solver(solver)
        self.opts = opts or MilpOptions(gap_tol=1e-4)
        # group independent blocks by period; auxiliary columns inherit it from their block
        col_t = np.full(self.base.c.size, -1)
        for key, h in self.built.vmap.items():
            col_t[h] = key[1]
        groups: dict[int, tuple[list, list]] = {t: ([], []) for t in range(case.horizon)}
        for cols, rows in components(self.base):
            ts = np.unique(col_t[cols][col_t[cols] >= 0])
            if ts.size > 1:
                raise ValueError("blocks spanning several periods are not supported by the restorer")
            t = int(ts[0]) if ts.size else 0
            groups[t][0].append(cols)
            groups[t][1].append(rows)
        self.periods: list[tuple[np.ndarray, np.ndarray]] = [
            (np.sort(np.concatenate(c)), np.sort(np.concatenate(r)))
            for c, r in (groups[t] for t in range(case.horizon))]

    def _fixed_bounds(self, fix: dict[tuple, float]):
        lb, ub = self.base.lb.copy(), self.base.ub.copy()
        for key, v in fix.items():
            h = self.built.vmap[key]
            v = min(max(v, lb[h]), ub[h])
            lb[h] = ub[h] = v
        return lb, ub

    def solve_period(self, t: int, lb, ub) -> tuple[float, np.ndarray] | None:
        cols, rows = self.periods[t]
        b = self.base
        A = b.A[rows][:, cols]
        arr = type(b)(b.c[cols], lb[cols], ub[cols], A.tocsc(), b.row_lo[rows], b.row_hi[rows],
                      b.integer[cols], 0.0)
        sol = self.solver.solve_arrays(arr, self.opts)
        if sol.status is not Status.OPTIMAL or not math.isfinite(sol.objective):
            return None
        return sol.objective, sol.values

    def solve_fixed(self, *fixes: dict[tuple, float]) -> tuple[float, Schedule] | None:
        bounds = [self._fixed_bounds(f) for f in fixes]
        x = np.zeros(self.base.c.size)
        total = self.base.obj_offset
        for t, (cols, _) in enumerate(self.periods):
            best = None
            for lb, ub in bounds:
                res = self.solve_period(t, lb, ub)
                if res is not None and (best is None or res[0] < best[0] - 1e-9):
                    best = res
            if best is None:
                return None
            total += best[0]
            x[cols] = best[1]
        return total, self.built.schedule(x, total)


def restore_feasibility(state: CoordinatorState, case: NetworkCase, restorer: Restorer | None = None,
                        weights: tuple[float, ...] = RESTORE_WEIGHTS, directions: bool = False):
    """Fix exchanges from the latest values and solve; keeps the best point found so far.

    With ``directions`` the averaged fixing is also tried with free magnitudes.
    """
    restorer = restorer or Restorer(case)
    fixes = [averaged_exchanges(case, state.latest, w) for w in weights]
    if directions:
        fixes.append(direction_fixing(averaged_exchanges(case, state.latest)))
    res = restorer.solve_fixed(*fixes)
    if res is not None and res[0] < state.best_cost:
        state.best_feasible = res
    return res


def dual_value(state: CoordinatorState, case: NetworkCase, workers: dict[str, SubproblemSolver]) -> float:
    """Sum of subproblem lower bounds at the current multipliers; keeps the max."""
    q = 0.0
    for m in case.mg_ids:
        _, _, bound, _ = workers[m].solve(state.lam_p, state.lam_q)
        q += bound
    state.dual_bound = max(state.dual_bound, q)
    return q


def gap(state: CoordinatorState) -> float:
    if state.best_feasible is None or not math.isfinite(state.dual_bound):
        raise NoFeasibleYet("gap needs a feasible cost and a dual bound")
    feas = state.best_feasible[0]
    return (feas - state.dual_bound) / abs(feas) if feas != 0 else (0.0 if feas == state.dual_bound else math.inf)


def settlement_costs(case: NetworkCase, schedule: Schedule, lam_p, lam_q) -> dict[str, float]:
    """Exchange settlements priced at the given multipliers (sums to zero when coupled)."""
    out = {m: 0.0 for m in case.mg_ids}
    for k, (b, s) in enumerate(case.directed_interfaces()):
        for t in range(case.horizon):
            out[b] += lam_p[t, k] * schedule.get("Pbuy", t, b, s) + lam_q[t, k] * schedule.get("Qbuy", t, b, s)
            out[s] -= lam_p[t, k] * schedule.get("Psell", t, s, b) + lam_q[t, k] * schedule.get("Qsell", t, s, b)
    return out


__all__ = [
    "Arrival", "ARRIVAL_FIELDS", "CoordinatorState", "DaslrOptions", "EXCHANGE_SYMBOLS", "NoFeasibleYet",
    "RESTORE_WEIGHTS", "Restorer", "StaleActorError", "SubproblemFailed", "SubproblemSolver", "averaged_exchanges", "direction_fixing", "dual_value", "gamma_schedule",
    "gap", "make_arrival", "new_state", "restore_feasibility", "settlement_costs", "surrogate_stepsize",
    "update_multipliers", "violation", "violation_norm",
]
