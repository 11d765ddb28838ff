"""Synchronous consensus ADMM over the same microgrid subproblems.

Each round every microgrid minimises its local cost plus the multiplier terms
plus ``rho/2 (x - z)^2`` for each of its exchange variables ``x``, where ``z``
is the consensus target of that directed interface from the previous round.
The quadratic is replaced by its secant interpolant on a breakpoint grid
(default 8 segments over the exchange range, with ``z`` added as a
breakpoint), so subproblems stay MILPs.  Then ``z`` becomes the average of
buyer and seller, and the multipliers move by ``rho * (buy - sell)``.

``rho`` is given in normalised units: the effective quadratic coefficient is
``rho * C / xbar`` with ``C`` the mean generation cost of one p.u.-period and
``xbar`` the largest exchange limit, so a deviation of ``xbar`` costs
``rho/2`` times the energy it represents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .builder import SubproblemTemplate
from .case import NetworkCase
from .daslr import SubproblemFailed
from .milp import MilpOptions, Status, get_solver
from .milp.model import ModelArrays


class DivergenceDetected(RuntimeWarning):
    pass


@dataclass
class AdmmOptions:
    rho: float = 1.0
    segments: int = 8
    max_iters: int = 60
    residual_ceiling: float = 1.0  # p.u.; divergence if exceeded ...
    divergence_window: int = 5      # ... for this many consecutive rounds
    relax: bool = False             # drop integrality (continuous-relaxation runs)
    solver: str = "kernel"
    sub_gap: float = 1e-4
    tol: float = 1e-6               # primal and dual residual stopping threshold


@dataclass
class AdmmState:
    z_p: np.ndarray
    z_q: np.ndarray
    y_p: np.ndarray
    y_q: np.ndarray
    rho: float
    k: int = 0
    primal_history: list[float] = field(default_factory=list)
    dual_history: list[float] = field(default_factory=list)
    latest: dict[str, dict[tuple, float]] = field(default_factory=dict)
    diverged: bool = False
    over_ceiling: int = 0
    local_costs: dict[str, float] = field(default_factory=dict)  # own cost of each MG's last solve

    @property
    def total_cost(self) -> float:
        return float(sum(self.local_costs.values()))


def effective_rho(case: NetworkCase, rho: float) -> float:
    prices = [d.gen_price for mg in case.microgrids for d in mg.ders if d.dispatchable]
    C = case.cost_per_pu(float(np.mean(prices)) if prices else case.prices.shed_price)
    xbar = max([max(l.p_buy_max, l.p_sell_max, l.q_buy_max, l.q_sell_max) for l in case.interfaces] or [1.0])
    return rho * C / max(xbar, 1e-9)


def new_admm_state(case: NetworkCase, opts: AdmmOptions | None = None, start: dict | None = None) -> AdmmState:
    opts = opts or AdmmOptions()
    K = len(case.directed_interfaces())
    shape = (case.horizon, K)
    st = AdmmState(np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(shape),
                   effective_rho(case, opts.rho))
    if start:
        st.z_p, st.z_q = np.array(start["z_p"], float), np.array(start["z_q"], float)
    return st


def pwl_secants(lo: float, hi: float, z: float, coef: float, segments: int) -> list[tuple[float, float]]:
    """(slope, intercept) of the secants of ``coef/2 (x - z)^2`` on a grid over [lo, hi] with z added."""
    if hi <= lo:
        return [(0.0, 0.0)]
    pts = set(np.linspace(lo, hi, segments + 1).tolist())
    if lo < z < hi:
        pts.add(float(z))
    pts = sorted(pts)
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        fa, fb = 0.5 * coef * (a - z) ** 2, 0.5 * coef * (b - z) ** 2
        slope = (fb - fa) / (b - a)
        out.append((slope, fa - slope * a))
    return out


def _targets(case: NetworkCase, mg_id: str, tmpl: SubproblemTemplate, st: AdmmState):
    """(column, z) for each exchange variable of ``mg_id``."""
    out = []
    vm = tmpl.vmap
    for k, (b, s) in enumerate(case.directed_interfaces()):
        for t in range(case.horizon):
            if b == mg_id:
                out.append((vm.of("Pbuy", t, b, s), st.z_p[t, k]))
                out.append((vm.of("Qbuy", t, b, s), st.z_q[t, k]))
            elif s == mg_id:
                out.append((vm.of("Psell", t, s, b), st.z_p[t, k]))
                out.append((vm.of("Qsell", t, s, b), st.z_q[t, k]))
    return out


def penalized_arrays(tmpl: SubproblemTemplate, lam_p, lam_q, targets, coef: float, segments: int,
                     relax: bool = False) -> tuple[ModelArrays, int]:
    """Subproblem arrays plus one epigraph column per exchange variable."""
    base = tmpl.arrays(lam_p, lam_q)
    n, m = base.c.size, base.A.shape[0]
    rows, cols, vals, lo_r = [], [], [], []
    r = 0
    for i, (col, z) in enumerate(targets):
        for slope, icpt in pwl_secants(base.lb[col], base.ub[col], z, coef, segments):
            # s_i - slope * x >= icpt
            rows += [r, r]
            cols += [n + i, col]
            vals += [1.0, -slope]
            lo_r.append(icpt)
            r += 1
    ns = len(targets)
    E = sp.csc_matrix((vals, (rows, cols)), shape=(r, n + ns))
    A = sp.vstack([sp.hstack([base.A, sp.csc_matrix((m, ns))]), E]).tocsc()
    c = np.concatenate([base.c, np.ones(ns)])
    lb = np.concatenate([base.lb, np.zeros(ns)])
    ub = np.concatenate([base.ub, np.full(ns, np.inf)])
    integer = np.concatenate([base.integer & (not relax), np.zeros(ns, dtype=bool)])
    arr = ModelArrays(c, lb, ub, A, np.concatenate([base.row_lo, lo_r]),
                      np.concatenate([base.row_hi, np.full(r, np.inf)]), integer, base.obj_offset)
    return arr, n


class AdmmWorker:
    def __init__(self, case: NetworkCase, mg_id: str, opts: AdmmOptions):
        self.case, self.mg_id, self.opts = case, mg_id, opts
        self.template = SubproblemTemplate(case, mg_id)
        self.solver = get_solver(opts.solver)
        self.milp_opts = MilpOptions(gap_tol=opts.sub_gap)
        self.last_cost = math.nan

    def solve(self, st: AdmmState) -> dict[tuple, float]:
        targets = _targets(self.case, self.mg_id, self.template, st)
        arr, n = penalized_arrays(self.template, st.y_p, st.y_q, targets, st.rho, self.opts.segments,
                                  self.opts.relax)
        sol = self.solver.solve_arrays(arr, self.milp_opts)
        if sol.status not in (Status.OPTIMAL, Status.ITER_LIMIT) or not math.isfinite(sol.objective):
            raise SubproblemFailed(f"ADMM subproblem {self.mg_id} failed: {sol.status.value}")
        self.last_cost = self.template.local_cost(sol.values[:n])
        sched = self.template.built.schedule(sol.values[:n])
        return {(k[0], k[1], k[3]): v for k, v in sched.exchange(self.mg_id).items()}


def admm_iterate(st: AdmmState, case: NetworkCase, workers: dict[str, AdmmWorker],
                 opts: AdmmOptions | None = None) -> AdmmState:
    """One synchronous round: all solves use round-k values, then consensus and duals."""
    opts = opts or AdmmOptions()
    fresh = {m: workers[m].solve(st) for m in case.mg_ids}
    st.local_costs = {m: workers[m].last_cost for m in case.mg_ids}
    admm_consensus(st, case, fresh, opts)
    return st


def admm_consensus(st: AdmmState, case: NetworkCase, fresh: dict[str, dict[tuple, float]],
                   opts: AdmmOptions) -> AdmmState:
    directed = case.directed_interfaces()
    zp_old, zq_old = st.z_p.copy(), st.z_q.copy()
    rp = np.zeros_like(st.z_p)
    rq = np.zeros_like(st.z_q)
    for k, (b, s) in enumerate(directed):
        for t in range(case.horizon):
            pb, ps = fresh[b].get(("Pbuy", t, s), 0.0), fresh[s].get(("Psell", t, b), 0.0)
            qb, qs = fresh[b].get(("Qbuy", t, s), 0.0), fresh[s].get(("Qsell", t, b), 0.0)
            rp[t, k], rq[t, k] = pb - ps, qb - qs
            st.z_p[t, k], st.z_q[t, k] = 0.5 * (pb + ps), 0.5 * (qb + qs)
    st.y_p = st.y_p + st.rho * rp
    st.y_q = st.y_q + st.rho * rq
    primal = float(np.sqrt(np.sum(rp ** 2) + np.sum(rq ** 2)))
    dual = st.rho * float(np.sqrt(np.sum((st.z_p - zp_old) ** 2) + np.sum((st.z_q - zq_old) ** 2)))
    st.primal_history.append(primal)
    st.dual_history.append(dual)
    st.latest = fresh
    st.k += 1
    st.over_ceiling = st.over_ceiling + 1 if primal > opts.residual_ceiling else 0
    if st.over_ceiling >= opts.divergence_window:
        st.diverged = True
    return st
