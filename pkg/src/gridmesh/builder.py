"""Compile a :class:`NetworkCase` into MILP models.

Every decision symbol lives in a :class:`VariableMap` keyed by
``(symbol, t, mg, *entity)``.  Symbols:

==========  ==========================  =========================================
symbol      entity                      meaning
==========  ==========================  =========================================
Pg, Qg, ug  der id                      dispatchable output and commitment
Pdroop      der id                      (1/m_p)(f_ref - f) injection, p.u.
Qdroop      der id                      (1/m_q)(|V|ref - |V|) injection, p.u.
wp, wq      der id, level               one-hot droop selectors
zp, zq      der id                      sum_l k_l * aux_l (droop products)
dp, dq      der id                      integer level index sum_l l * w_l
Pch, Pdch   battery id                  charge / discharge
uch         battery id                  1 = charging
Pil, Qil    bus id                      shedding
Pflow       from bus, to bus            parent -> child branch flow (also Qflow)
V           bus id                      voltage magnitude
f           --                          microgrid frequency
Pbuy ...    neighbour mg                Pbuy, Psell, Qbuy, Qsell, ubuy
==========  ==========================  =========================================
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .case import Microgrid, NetworkCase, droop_grid
from .milp.model import MilpModel, ModelArrays, VarKind

EXCHANGE_SYMBOLS = ("Pbuy", "Psell", "Qbuy", "Qsell", "ubuy")


class ModelBuildError(ValueError):
    pass


class UnboundedFactor(ModelBuildError):
    pass


class EmptyGrid(ModelBuildError):
    pass


class MissingMultiplier(ModelBuildError):
    pass


class DimensionMismatch(ModelBuildError):
    pass


class VariableMap(dict):
    """``(symbol, t, mg, *entity) -> column index``; also records droop products."""

    def __init__(self):
        super().__init__()
        self.products: dict[tuple, "LinearizedProduct"] = {}

    def add(self, model: MilpModel, key: tuple, lower=0.0, upper=math.inf, kind=VarKind.CONTINUOUS,
            obj=0.0) -> int:
        if key in self:
            raise ModelBuildError(f"duplicate variable {key}")
        h = model.add_var("_".join(str(k) for k in key), lower, upper, kind, obj)
        self[key] = h
        return h

    def of(self, symbol: str, *idx) -> int:
        return self[(symbol,) + idx]


@dataclass
class LinearizedProduct:
    selectors: list[int]
    factor: int
    factor_bounds: tuple[float, float]
    grid: list[float]
    z: int
    aux: list[int]
    index: int | None = None


# --- linearization ------------------------------------------------------------

def _bounds(model: MilpModel, h: int) -> tuple[float, float]:
    v = model.variables[h]
    return v.lower, v.upper


def linearize_binary_product(model: MilpModel, A: int, d: int, name: str = "") -> int:
    """New ``z`` with ``z = A*d`` at every integral ``d``, via four linear rows."""
    lo, hi = _bounds(model, A)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise UnboundedFactor(f"factor {model.variables[A].name!r} needs finite bounds")
    z = model.add_var(name or f"prod_{A}_{d}", min(lo, 0.0), max(hi, 0.0))
    model.add_row({z: 1.0, d: -hi}, "<=", 0.0, f"{name}:9a")          # z <= hi*d
    model.add_row({z: 1.0, d: -lo}, ">=", 0.0, f"{name}:9b")          # z >= lo*d
    model.add_row({z: 1.0, A: -1.0, d: -lo}, "<=", -lo, f"{name}:9c")  # z <= A - lo*(1-d)
    model.add_row({z: 1.0, A: -1.0, d: -hi}, ">=", -hi, f"{name}:9d")  # z >= A - hi*(1-d)
    return z


def linearize_integer_product(model: MilpModel, A: int, grid, name: str = "",
                              selectors: list[int] | None = None, index_var: bool = True,
                              hull: bool = True) -> LinearizedProduct:
    """``z = grid[l] * A`` where ``l`` is chosen by one-hot binaries.

    Pass ``selectors`` to reuse an existing one-hot group (its one-hot row is
    assumed present); otherwise the group, its one-hot row and the integer
    level index are created here.  ``hull`` adds ``sum_l aux_l = A``, valid at
    every integer point, which makes the relaxation the convex hull of the
    one-hot disjunction.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise EmptyGrid(f"{name}: empty coefficient grid")
    lo, hi = _bounds(model, A)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise UnboundedFactor(f"{name}: factor needs finite bounds")
    index = None
    if selectors is None:
        selectors = [model.add_var(f"{name}_w{l}", 0, 1, VarKind.BINARY) for l in range(len(grid))]
        model.add_row({w: 1.0 for w in selectors}, "=", 1.0, f"{name}:10a")
        if index_var:
            index = model.add_var(f"{name}_d", 0, len(grid) - 1, VarKind.INTEGER)
            terms = {w: float(l) for l, w in enumerate(selectors)}
            terms[index] = -1.0
            model.add_row(terms, "=", 0.0, f"{name}:10b")
    elif len(selectors) != len(grid):
        raise ModelBuildError(f"{name}: {len(selectors)} selectors for a {len(grid)}-level grid")
    aux = [linearize_binary_product(model, A, w, f"{name}_a{l}") for l, w in enumerate(selectors)]
    if hull:
        model.add_row({**{a: 1.0 for a in aux}, A: -1.0}, "=", 0.0, f"{name}:hull")
    zlo = sum(min(g * lo, g * hi, 0.0) for g in grid)
    zhi = sum(max(g * lo, g * hi, 0.0) for g in grid)
    z = model.add_var(f"{name}_z", zlo, zhi)
    terms = {a: -g for a, g in zip(aux, grid)}
    terms[z] = 1.0
    model.add_row(terms, "=", 0.0, f"{name}:10c")
    return LinearizedProduct(list(selectors), A, (lo, hi), grid, z, aux, index)


def build_droop_terms(model: MilpModel, vm: VariableMap, case: NetworkCase, mg: Microgrid, t: int) -> None:
    """Create droop selectors, products and the ``Pdroop``/``Qdroop`` injections of one period.

    Needs ``f``, ``V`` and ``ug`` of the period already in ``vm``.
    """
    f = vm.of("f", t, mg.id)
    for d in mg.ders:
        if not d.dispatchable:
            continue
        if d.droop is None:
            raise ModelBuildError(f"DER {d.id}: dispatchable unit without droop spec")
        u = vm.of("ug", t, mg.id, d.id)
        frac = d.droop.contribution_frac
        # real power: z_p = k_p * f, injection = s_p * (k_p * f_ref - z_p)
        kp = [1.0 / m for m in droop_grid(d.droop, "p")]
        wp = [vm.add(model, ("wp", t, mg.id, d.id, l), 0, 1, VarKind.BINARY) for l in range(len(kp))]
        model.add_row({w: 1.0 for w in wp}, "=", 1.0, f"droop_onehot_p:{t}:{d.id}")
        dp = vm.add(model, ("dp", t, mg.id, d.id), 0, len(kp) - 1, VarKind.INTEGER)
        model.add_row({**{w: float(l) for l, w in enumerate(wp)}, dp: -1.0}, "=", 0.0, f"droop_index_p:{t}:{d.id}")
        prod = linearize_integer_product(model, f, kp, f"zp_{t}_{d.id}", selectors=wp)
        prod.index = dp
        vm[("zp", t, mg.id, d.id)] = prod.z
        vm.products[("p", t, mg.id, d.id)] = prod
        cap = frac * d.p_max
        pd = vm.add(model, ("Pdroop", t, mg.id, d.id), -cap, cap)
        s = case.droop_p_scale
        terms = {pd: 1.0, prod.z: s}
        for l, w in enumerate(wp):
            terms[w] = -s * kp[l] * mg.f_ref_hz
        model.add_row(terms, "=", 0.0, f"droop_p:{t}:{d.id}")
        model.add_row({pd: 1.0, u: -cap}, "<=", 0.0, f"droop_cap_p:{t}:{d.id}")
        model.add_row({pd: -1.0, u: -cap}, "<=", 0.0, f"droop_cap_p:{t}:{d.id}")
        model.add_row({vm.of("Pg", t, mg.id, d.id): 1.0, pd: 1.0, u: -d.p_max}, "<=", 0.0, f"gen_total_p:{t}:{d.id}")
        if d.q_max <= 0.0:
            continue  # no reactive capability, no voltage droop (fuel cells)
        bus = mg.bus(d.bus)
        V = vm.of("V", t, mg.id, d.bus)
        kq = [1.0 / m for m in droop_grid(d.droop, "q")]
        wq = [vm.add(model, ("wq", t, mg.id, d.id, l), 0, 1, VarKind.BINARY) for l in range(len(kq))]
        model.add_row({w: 1.0 for w in wq}, "=", 1.0, f"droop_onehot_q:{t}:{d.id}")
        dq = vm.add(model, ("dq", t, mg.id, d.id), 0, len(kq) - 1, VarKind.INTEGER)
        model.add_row({**{w: float(l) for l, w in enumerate(wq)}, dq: -1.0}, "=", 0.0, f"droop_index_q:{t}:{d.id}")
        prod = linearize_integer_product(model, V, kq, f"zq_{t}_{d.id}", selectors=wq)
        prod.index = dq
        vm[("zq", t, mg.id, d.id)] = prod.z
        vm.products[("q", t, mg.id, d.id)] = prod
        capq = frac * d.q_max
        qd = vm.add(model, ("Qdroop", t, mg.id, d.id), -capq, capq)
        s = case.droop_q_scale
        terms = {qd: 1.0, prod.z: s}
        for l, w in enumerate(wq):
            terms[w] = -s * kq[l] * bus.v_ref_pu
        model.add_row(terms, "=", 0.0, f"droop_q:{t}:{d.id}")
        model.add_row({qd: 1.0, u: -capq}, "<=", 0.0, f"droop_cap_q:{t}:{d.id}")
        model.add_row({qd: -1.0, u: -capq}, "<=", 0.0, f"droop_cap_q:{t}:{d.id}")
        model.add_row({vm.of("Qg", t, mg.id, d.id): 1.0, qd: 1.0, u: -d.q_max}, "<=", 0.0, f"gen_total_q:{t}:{d.id}")


# --- microgrid block ------------------------------------------------------------

def exchange_limits(case: NetworkCase, mg_id: str, nb: str):
    """(bus, p_buy_max, p_sell_max, q_buy_max, q_sell_max) of ``mg_id`` toward ``nb``."""
    for other, link in case.neighbours(mg_id):
        if other != nb:
            continue
        if link.mg_a == mg_id:
            return link.bus_a, link.p_buy_max, link.p_sell_max, link.q_buy_max, link.q_sell_max
        # mirror: what a may sell, b may buy
        return link.bus_b, link.p_sell_max, link.p_buy_max, link.q_sell_max, link.q_buy_max
    raise KeyError((mg_id, nb))


def _add_microgrid(model: MilpModel, vm: VariableMap, case: NetworkCase, mg: Microgrid) -> None:
    T = case.horizon
    lo_flow = 0.0 if case.flow_mode == "directed" else None
    tree = mg.tree()
    shed_cost = case.cost_per_pu(case.prices.shed_price)
    for t in range(T):
        m = mg.id
        vm.add(model, ("f", t, m), case.f_min_hz, case.f_max_hz)
        for b in mg.buses:
            vm.add(model, ("V", t, m, b.id), b.v_min_pu, b.v_max_pu)
            ld = mg.load(b.id)
            pl = ld.p[t] if ld else 0.0
            ql = ld.q[t] if ld else 0.0
            vm.add(model, ("Pil", t, m, b.id), 0.0, max(0.0, min(b.shed_p_max, pl)), obj=shed_cost)
            vm.add(model, ("Qil", t, m, b.id), 0.0, max(0.0, min(b.shed_q_max, ql)), obj=shed_cost)
        for d in mg.ders:
            if not d.dispatchable:
                continue
            u = vm.add(model, ("ug", t, m, d.id), 0, 1, VarKind.BINARY)
            p = vm.add(model, ("Pg", t, m, d.id), min(0.0, d.p_min), d.p_max, obj=case.cost_per_pu(d.gen_price))
            q = vm.add(model, ("Qg", t, m, d.id), min(0.0, d.q_min), d.q_max)
            model.add_row({p: 1.0, u: -d.p_max}, "<=", 0.0, f"gen_p_max:{t}:{d.id}")
            model.add_row({p: 1.0, u: -d.p_min}, ">=", 0.0, f"gen_p_min:{t}:{d.id}")
            model.add_row({q: 1.0, u: -d.q_max}, "<=", 0.0, f"gen_q_max:{t}:{d.id}")
            model.add_row({q: 1.0, u: -d.q_min}, ">=", 0.0, f"gen_q_min:{t}:{d.id}")
        for bat in mg.batteries:
            u = vm.add(model, ("uch", t, m, bat.id), 0, 1, VarKind.BINARY)
            ch = vm.add(model, ("Pch", t, m, bat.id), 0.0, bat.ch_max, obj=-case.cost_per_pu(bat.ch_price))
            dch = vm.add(model, ("Pdch", t, m, bat.id), 0.0, bat.dch_max, obj=case.cost_per_pu(bat.dch_price))
            model.add_row({ch: 1.0, u: -bat.ch_max}, "<=", 0.0, f"bat_ch:{t}:{bat.id}")
            model.add_row({dch: 1.0, u: bat.dch_max}, "<=", bat.dch_max, f"bat_dch:{t}:{bat.id}")
        for parent, child, ln in tree:
            lo_p = lo_flow if lo_flow is not None else -ln.p_flow_max
            lo_q = lo_flow if lo_flow is not None else -ln.q_flow_max
            P = vm.add(model, ("Pflow", t, m, parent, child), lo_p, ln.p_flow_max)
            Q = vm.add(model, ("Qflow", t, m, parent, child), lo_q, ln.q_flow_max)
            # |V_child| = |V_parent| - (r P + x Q) / |V0|
            model.add_row({vm.of("V", t, m, child): 1.0, vm.of("V", t, m, parent): -1.0,
                           P: ln.r_pu / mg.pcc_voltage_pu, Q: ln.x_pu / mg.pcc_voltage_pu},
                          "=", 0.0, f"distflow_v:{t}:{parent}-{child}")
        for nb, _link in case.neighbours(m):
            _, pb, ps, qb, qs = exchange_limits(case, m, nb)
            u = vm.add(model, ("ubuy", t, m, nb), 0, 1, VarKind.BINARY)
            Pb = vm.add(model, ("Pbuy", t, m, nb), 0.0, pb)
            Psl = vm.add(model, ("Psell", t, m, nb), 0.0, ps)
            Qb = vm.add(model, ("Qbuy", t, m, nb), 0.0, qb)
            Qsl = vm.add(model, ("Qsell", t, m, nb), 0.0, qs)
            model.add_row({Pb: 1.0, u: -pb}, "<=", 0.0, f"xchg_pbuy:{t}:{m}-{nb}")
            model.add_row({Psl: 1.0, u: ps}, "<=", ps, f"xchg_psell:{t}:{m}-{nb}")
            model.add_row({Qb: 1.0, u: -qb}, "<=", 0.0, f"xchg_qbuy:{t}:{m}-{nb}")
            model.add_row({Qsl: 1.0, u: qs}, "<=", qs, f"xchg_qsell:{t}:{m}-{nb}")
        build_droop_terms(model, vm, case, mg, t)
        _add_balances(model, vm, case, mg, t, tree)


def _add_balances(model, vm, case, mg, t, tree) -> None:
    m = mg.id
    parent_of = {child: parent for parent, child, _ in tree}
    children: dict[str, list[str]] = {b.id: [] for b in mg.buses}
    for parent, child, _ in tree:
        children[parent].append(child)
    for b in mg.buses:
        n = b.id
        tp: dict[int, float] = {}
        tq: dict[int, float] = {}
        rp = rq = 0.0
        ld = mg.load(n)
        if ld:
            rp += ld.p[t]
            rq += ld.q[t]
        for d in mg.ders:
            if d.bus != n:
                continue
            if d.dispatchable:
                tp[vm.of("Pg", t, m, d.id)] = 1.0
                tq[vm.of("Qg", t, m, d.id)] = 1.0
                tp[vm.of("Pdroop", t, m, d.id)] = 1.0
                if ("Qdroop", t, m, d.id) in vm:
                    tq[vm.of("Qdroop", t, m, d.id)] = 1.0
            else:
                rp -= d.profile_p[t]
                rq -= d.profile_q[t]
        for bat in mg.batteries:
            if bat.bus == n:
                tp[vm.of("Pdch", t, m, bat.id)] = 1.0
                tp[vm.of("Pch", t, m, bat.id)] = -1.0
        tp[vm.of("Pil", t, m, n)] = 1.0
        tq[vm.of("Qil", t, m, n)] = 1.0
        if n in parent_of:
            tp[vm.of("Pflow", t, m, parent_of[n], n)] = 1.0
            tq[vm.of("Qflow", t, m, parent_of[n], n)] = 1.0
        for c in children[n]:
            tp[vm.of("Pflow", t, m, n, c)] = -1.0
            tq[vm.of("Qflow", t, m, n, c)] = -1.0
        for nb, _ in case.neighbours(m):
            if exchange_limits(case, m, nb)[0] != n:
                continue
            tp[vm.of("Pbuy", t, m, nb)] = 1.0
            tp[vm.of("Psell", t, m, nb)] = -1.0
            tq[vm.of("Qbuy", t, m, nb)] = 1.0
            tq[vm.of("Qsell", t, m, nb)] = -1.0
        model.add_row(tp, "=", rp, f"balance_p:{t}:{m}:{n}")
        model.add_row(tq, "=", rq, f"balance_q:{t}:{m}:{n}")


# --- built models ------------------------------------------------------------------

@dataclass
class BuiltModel:
    case: NetworkCase
    model: MilpModel
    vmap: VariableMap
    mg_ids: tuple[str, ...]
    directed: list[tuple[str, str]] = field(default_factory=list)

    def schedule(self, values, objective: float | None = None) -> "Schedule":
        x = np.asarray(values, dtype=float)
        vals = {key: float(x[h]) for key, h in self.vmap.items()}
        obj = self.model.objective_value(x) if objective is None else objective
        return Schedule(self.case.horizon, vals, obj, self.mg_ids)


@dataclass
class Schedule:
    """Per-period decisions keyed like :class:`VariableMap` entries."""

    horizon: int
    values: dict[tuple, float]
    objective: float
    mg_ids: tuple[str, ...] = ()

    def get(self, symbol: str, *idx, default: float = 0.0) -> float:
        return self.values.get((symbol,) + idx, default)

    def rows(self):
        """``(t, mg, symbol, entity, value)`` sorted for CSV output."""
        out = []
        for key, v in self.values.items():
            sym, t, mg, *ent = key
            out.append((t, mg, sym, "/".join(str(e) for e in ent), v))
        out.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
        return out

    def exchange(self, mg_id: str) -> dict[tuple, float]:
        return {k: v for k, v in self.values.items() if k[0] in EXCHANGE_SYMBOLS and k[2] == mg_id}


def directed_interfaces(case: NetworkCase) -> list[tuple[str, str]]:
    return case.directed_interfaces()


def build_centralized(case: NetworkCase, coupling: bool = True) -> BuiltModel:
    model = MilpModel(f"{case.name}:centralized")
    vm = VariableMap()
    for mg in case.microgrids:
        _add_microgrid(model, vm, case, mg)
    directed = case.directed_interfaces()
    if coupling:
        for t in range(case.horizon):
            for buyer, seller in directed:
                model.add_row({vm.of("Pbuy", t, buyer, seller): 1.0, vm.of("Psell", t, seller, buyer): -1.0},
                              "=", 0.0, f"couple_p:{t}:{buyer}<-{seller}")
                model.add_row({vm.of("Qbuy", t, buyer, seller): 1.0, vm.of("Qsell", t, seller, buyer): -1.0},
                              "=", 0.0, f"couple_q:{t}:{buyer}<-{seller}")
    try:
        model.validate()
    except ValueError as exc:
        raise ModelBuildError(str(exc)) from None
    return BuiltModel(case, model, vm, tuple(case.mg_ids), directed)


def _check_multipliers(case: NetworkCase, lam, label: str) -> np.ndarray:
    shape = (case.horizon, len(case.directed_interfaces()))
    if lam is None:
        raise MissingMultiplier(f"{label} multipliers missing")
    arr = np.asarray(lam, dtype=float)
    if arr.shape != shape:
        raise MissingMultiplier(f"{label} multipliers have shape {arr.shape}, need {shape}")
    return arr


class SubproblemTemplate:
    """One microgrid's local model; only the objective depends on the multipliers."""

    def __init__(self, case: NetworkCase, mg_id: str):
        self.case = case
        self.mg_id = mg_id
        mg = case.mg(mg_id)
        model = MilpModel(f"{case.name}:{mg_id}")
        vm = VariableMap()
        _add_microgrid(model, vm, case, mg)
        model.validate()
        self.built = BuiltModel(case, model, vm, (mg_id,), case.directed_interfaces())
        self.base = model.arrays()
        # multiplier index -> (column, sign) pairs
        self.p_terms: list[tuple[int, int, int, float]] = []  # (t, k, col, sign)
        self.q_terms: list[tuple[int, int, int, float]] = []
        for k, (buyer, seller) in enumerate(self.built.directed):
            for t in range(case.horizon):
                if buyer == mg_id:
                    self.p_terms.append((t, k, vm.of("Pbuy", t, mg_id, seller), 1.0))
                    self.q_terms.append((t, k, vm.of("Qbuy", t, mg_id, seller), 1.0))
                elif seller == mg_id:
                    self.p_terms.append((t, k, vm.of("Psell", t, mg_id, buyer), -1.0))
                    self.q_terms.append((t, k, vm.of("Qsell", t, mg_id, buyer), -1.0))

    @property
    def model(self) -> MilpModel:
        return self.built.model

    @property
    def vmap(self) -> VariableMap:
        return self.built.vmap

    def objective(self, lam_p, lam_q) -> np.ndarray:
        lp = _check_multipliers(self.case, lam_p, "real-power")
        lq = _check_multipliers(self.case, lam_q, "reactive-power")
        c = self.base.c.copy()
        for t, k, col, sign in self.p_terms:
            c[col] += sign * lp[t, k]
        for t, k, col, sign in self.q_terms:
            c[col] += sign * lq[t, k]
        return c

    def arrays(self, lam_p, lam_q) -> ModelArrays:
        b = self.base
        return ModelArrays(self.objective(lam_p, lam_q), b.lb, b.ub, b.A, b.row_lo, b.row_hi, b.integer,
                           b.obj_offset)

    def local_cost(self, values) -> float:
        """The microgrid's own cost terms (no multiplier terms)."""
        return float(self.base.c @ np.asarray(values, dtype=float))


def build_subproblem(case: NetworkCase, mg_id: str, lam_p, lam_q) -> BuiltModel:
    """Local model of ``mg_id`` with the multiplier terms folded into the objective."""
    if mg_id not in case.mg_ids:
        raise ModelBuildError(f"unknown microgrid {mg_id}")
    tmpl = SubproblemTemplate(case, mg_id)
    c = tmpl.objective(lam_p, lam_q)
    for j, v in enumerate(tmpl.model.variables):
        v.obj = float(c[j])
    return tmpl.built


# --- checks on schedules ------------------------------------------------------------

def flow_conservation_residual(case: NetworkCase, schedule: Schedule) -> np.ndarray:
    """LHS - RHS of the real and reactive nodal balances.

    Returns an array of shape ``(T, n_buses_total, 2)``; buses are ordered by
    microgrid, then by bus list order.
    """
    if schedule.horizon != case.horizon:
        raise DimensionMismatch(f"schedule has {schedule.horizon} periods, case has {case.horizon}")
    nbus = sum(len(m.buses) for m in case.microgrids)
    out = np.zeros((case.horizon, nbus, 2))
    g = schedule.get
    for t in range(case.horizon):
        col = 0
        for mg in case.microgrids:
            m = mg.id
            tree = mg.tree()
            parent_of = {c: p for p, c, _ in tree}
            for b in mg.buses:
                n = b.id
                p = q = 0.0
                for d in mg.ders:
                    if d.bus != n:
                        continue
                    if d.dispatchable:
                        p += g("Pg", t, m, d.id) + g("Pdroop", t, m, d.id)
                        q += g("Qg", t, m, d.id) + g("Qdroop", t, m, d.id)
                    else:
                        p += d.profile_p[t]
                        q += d.profile_q[t]
                for bat in mg.batteries:
                    if bat.bus == n:
                        p += g("Pdch", t, m, bat.id) - g("Pch", t, m, bat.id)
                p += g("Pil", t, m, n)
                q += g("Qil", t, m, n)
                if n in parent_of:
                    p += g("Pflow", t, m, parent_of[n], n)
                    q += g("Qflow", t, m, parent_of[n], n)
                for parent, child, _ in tree:
                    if parent == n:
                        p -= g("Pflow", t, m, n, child)
                        q -= g("Qflow", t, m, n, child)
                for nb, _ in case.neighbours(m):
                    if exchange_limits(case, m, nb)[0] == n:
                        p += g("Pbuy", t, m, nb) - g("Psell", t, m, nb)
                        q += g("Qbuy", t, m, nb) - g("Qsell", t, m, nb)
                ld = mg.load(n)
                out[t, col, 0] = p - (ld.p[t] if ld else 0.0)
                out[t, col, 1] = q - (ld.q[t] if ld else 0.0)
                col += 1
    return out


def coupling_residual(case: NetworkCase, schedule: Schedule) -> np.ndarray:
    """``Pbuy[m<-w] - Psell[w->m]`` (and Q) per period and directed interface: shape (T, K, 2)."""
    directed = case.directed_interfaces()
    out = np.zeros((case.horizon, len(directed), 2))
    for t in range(case.horizon):
        for k, (b, s) in enumerate(directed):
            out[t, k, 0] = schedule.get("Pbuy", t, b, s) - schedule.get("Psell", t, s, b)
            out[t, k, 1] = schedule.get("Qbuy", t, b, s) - schedule.get("Qsell", t, s, b)
    return out


def mg_costs(case: NetworkCase, schedule: Schedule) -> dict[str, float]:
    """Each microgrid's own generation, battery and shedding cost."""
    out = {}
    g = schedule.get
    shed = case.cost_per_pu(case.prices.shed_price)
    for mg in case.microgrids:
        m = mg.id
        c = 0.0
        for t in range(case.horizon):
            for d in mg.ders:
                if d.dispatchable:
                    c += case.cost_per_pu(d.gen_price) * g("Pg", t, m, d.id)
            for bat in mg.batteries:
                c += case.cost_per_pu(bat.dch_price) * g("Pdch", t, m, bat.id)
                c -= case.cost_per_pu(bat.ch_price) * g("Pch", t, m, bat.id)
            for b in mg.buses:
                c += shed * (g("Pil", t, m, b.id) + g("Qil", t, m, b.id))
        out[m] = c
    return out


def droop_injection(case: NetworkCase, mg: Microgrid, der_id: str, m_p: float, f: float) -> float:
    """Direct evaluation of ``s_p * (1/m_p) * (f_ref - f)`` in p.u."""
    return case.droop_p_scale * (mg.f_ref_hz - f) / m_p
