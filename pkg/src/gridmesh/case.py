"""Networked-microgrid case description, JSON ingestion and validation.

Power quantities are held in per-unit on ``power_base_mva`` everywhere below
this module; files may state them in kW/kVAR (``system.units = "kW"``) or in
p.u. (``"pu"``).  Prices stay in $/kWh.  See ``docs/case_schema.md``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable

DISPATCHABLE_KINDS = ("MT", "FC", "CHP")
RENEWABLE_KINDS = ("WT", "PV")
FLOW_MODES = ("directed", "symmetric")


class CaseError(Exception):
    pass


class ParseError(CaseError):
    """The file is not valid JSON or does not follow the case schema."""


class ValidationError(CaseError):
    """A type invariant is broken; the message names the entity."""


class NonRadialError(ValidationError):
    """A microgrid's line graph has a cycle or is disconnected."""


@dataclass(frozen=True)
class DroopSpec:
    mp_min: float
    mp_max: float
    mp_step: float
    mq_min: float
    mq_max: float
    mq_step: float
    contribution_frac: float = 0.20


@dataclass(frozen=True)
class Bus:
    id: str
    v_min_pu: float = 0.95
    v_max_pu: float = 1.05
    v_ref_pu: float = 1.0
    shed_p_max: float = 0.0
    shed_q_max: float = 0.0


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    r_pu: float
    x_pu: float
    p_flow_max: float
    q_flow_max: float


@dataclass(frozen=True)
class Der:
    id: str
    kind: str
    bus: str
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    gen_price: float = 0.0
    droop: DroopSpec | None = None
    profile_p: tuple[float, ...] | None = None
    profile_q: tuple[float, ...] | None = None

    @property
    def dispatchable(self) -> bool:
        return self.kind in DISPATCHABLE_KINDS


@dataclass(frozen=True)
class Battery:
    id: str
    bus: str
    ch_max: float
    dch_max: float
    ch_price: float
    dch_price: float


@dataclass(frozen=True)
class BusLoad:
    bus: str
    p: tuple[float, ...]
    q: tuple[float, ...]


@dataclass(frozen=True)
class Microgrid:
    id: str
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    ders: tuple[Der, ...] = ()
    batteries: tuple[Battery, ...] = ()
    loads: tuple[BusLoad, ...] = ()
    pcc_voltage_pu: float = 1.0
    f_ref_hz: float = 60.0
    root_bus: str | None = None

    @property
    def root(self) -> str:
        return self.root_bus if self.root_bus is not None else self.buses[0].id

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def load(self, bus_id: str) -> BusLoad | None:
        for ld in self.loads:
            if ld.bus == bus_id:
                return ld
        return None

    def tree(self) -> list[tuple[str, str, Line]]:
        """Lines oriented parent -> child in breadth-first order from the root."""
        adj: dict[str, list[tuple[str, Line]]] = {b.id: [] for b in self.buses}
        for ln in self.lines:
            adj[ln.from_bus].append((ln.to_bus, ln))
            adj[ln.to_bus].append((ln.from_bus, ln))
        seen = {self.root}
        order, queue = [], [self.root]
        while queue:
            u = queue.pop(0)
            for v, ln in adj[u]:
                if v not in seen:
                    seen.add(v)
                    order.append((u, v, ln))
                    queue.append(v)
        return order


@dataclass(frozen=True)
class InterfaceLink:
    mg_a: str
    mg_b: str
    bus_a: str
    bus_b: str
    p_buy_max: float
    p_sell_max: float
    q_buy_max: float
    q_sell_max: float


@dataclass(frozen=True)
class PriceTable:
    shed_price: float
    gen_price_defaults: tuple[tuple[str, float], ...] = ()

    def default_gen_price(self, kind: str) -> float:
        return dict(self.gen_price_defaults).get(kind, 0.0)


@dataclass(frozen=True)
class NetworkCase:
    name: str
    power_base_mva: float
    horizon: int
    period_hours: float
    microgrids: tuple[Microgrid, ...]
    interfaces: tuple[InterfaceLink, ...]
    prices: PriceTable
    flow_mode: str = "directed"
    droop_p_scale: float = 0.001  # p.u. real power per unit of (1/m_p)(f_ref - f)
    droop_q_scale: float = 0.01   # p.u. reactive power per unit of (1/m_q)(|V|ref - |V|)
    f_min_hz: float = 59.5
    f_max_hz: float = 60.5
    notes: str = field(default="", compare=False)

    @property
    def base_kw(self) -> float:
        return self.power_base_mva * 1000.0

    def cost_per_pu(self, price_per_kwh: float) -> float:
        """Objective coefficient ($) of one p.u. held for one period."""
        return price_per_kwh * self.base_kw * self.period_hours

    def mg(self, mg_id: str) -> Microgrid:
        for m in self.microgrids:
            if m.id == mg_id:
                return m
        raise KeyError(mg_id)

    @property
    def mg_ids(self) -> list[str]:
        return [m.id for m in self.microgrids]

    def neighbours(self, mg_id: str) -> list[tuple[str, InterfaceLink]]:
        out = []
        for link in self.interfaces:
            if link.mg_a == mg_id:
                out.append((link.mg_b, link))
            elif link.mg_b == mg_id:
                out.append((link.mg_a, link))
        return out

    def directed_interfaces(self) -> list[tuple[str, str]]:
        """Every (buyer, seller) pair, in interface order: (a, b) then (b, a)."""
        out = []
        for link in self.interfaces:
            out.append((link.mg_a, link.mg_b))
            out.append((link.mg_b, link.mg_a))
        return out


# --- droop grids -------------------------------------------------------------

def _levels(lo: float, hi: float, step: float) -> int:
    return int(round((hi - lo) / step)) if hi > lo else 0


def droop_grid(spec: DroopSpec, axis: str = "p") -> list[float]:
    """Discrete droop coefficients ``lo + l*step`` for ``l = 0..D`` (both ends included)."""
    if axis == "p":
        lo, hi, step = spec.mp_min, spec.mp_max, spec.mp_step
    elif axis == "q":
        lo, hi, step = spec.mq_min, spec.mq_max, spec.mq_step
    else:
        raise ValueError(f"axis must be 'p' or 'q', got {axis!r}")
    D = _levels(lo, hi, step)
    if D == 0:
        return [lo]
    vals = [lo + l * step for l in range(D + 1)]
    vals[-1] = hi
    return vals


# --- validation ----------------------------------------------------------------

def _check(cond: bool, msg: str, exc=ValidationError) -> None:
    if not cond:
        raise exc(msg)


def _check_grid(owner: str, lo: float, hi: float, step: float, axis: str) -> None:
    _check(hi >= lo > 0, f"{owner}: droop m{axis} range needs max >= min > 0")
    _check(step > 0, f"{owner}: droop m{axis}_step must be positive")
    ratio = (hi - lo) / step
    _check(abs(ratio - round(ratio)) <= 1e-6 * max(1.0, ratio),
           f"{owner}: droop m{axis} range is not a whole number of steps")


def validate_case(case: NetworkCase) -> None:
    T = case.horizon
    _check(T >= 1, "system: horizon must be >= 1")
    _check(case.power_base_mva > 0, "system: power_base_mva must be positive")
    _check(case.period_hours > 0, "system: period_hours must be positive")
    _check(case.flow_mode in FLOW_MODES, f"system: flow_mode must be one of {FLOW_MODES}")
    _check(case.f_min_hz <= case.f_max_hz, "system: f_min_hz > f_max_hz")
    _check(case.prices.shed_price >= 0 and all(p >= 0 for _, p in case.prices.gen_price_defaults),
           "prices: all prices must be nonnegative")
    ids = [m.id for m in case.microgrids]
    _check(len(ids) >= 1, "case: at least one microgrid required")
    _check(len(set(ids)) == len(ids), "case: duplicate microgrid ids")
    for mg in case.microgrids:
        _validate_mg(mg, T)
    pairs = set()
    for link in case.interfaces:
        tag = f"interface {link.mg_a}-{link.mg_b}"
        _check(link.mg_a != link.mg_b, f"{tag}: links a microgrid to itself")
        _check(link.mg_a in ids and link.mg_b in ids, f"{tag}: unknown microgrid")
        key = frozenset((link.mg_a, link.mg_b))
        _check(key not in pairs, f"{tag}: duplicate link for this microgrid pair")
        pairs.add(key)
        _check(link.bus_a in {b.id for b in case.mg(link.mg_a).buses}, f"{tag}: bus {link.bus_a} not in {link.mg_a}")
        _check(link.bus_b in {b.id for b in case.mg(link.mg_b).buses}, f"{tag}: bus {link.bus_b} not in {link.mg_b}")
        _check(min(link.p_buy_max, link.p_sell_max, link.q_buy_max, link.q_sell_max) >= 0,
               f"{tag}: exchange limits must be nonnegative")


def _validate_mg(mg: Microgrid, T: int) -> None:
    tag = f"microgrid {mg.id}"
    _check(mg.pcc_voltage_pu > 0, f"{tag}: pcc_voltage_pu must be positive")
    _check(len(mg.buses) >= 1, f"{tag}: no buses")
    bus_ids = [b.id for b in mg.buses]
    _check(len(set(bus_ids)) == len(bus_ids), f"{tag}: duplicate bus ids")
    known = set(bus_ids)
    _check(mg.root in known, f"{tag}: root bus {mg.root} does not exist")
    for b in mg.buses:
        _check(0 < b.v_min_pu <= b.v_ref_pu <= b.v_max_pu, f"{tag} bus {b.id}: need 0 < v_min <= v_ref <= v_max")
        _check(b.shed_p_max >= 0 and b.shed_q_max >= 0, f"{tag} bus {b.id}: shed limits must be >= 0")
    for ln in mg.lines:
        lt = f"{tag} line {ln.from_bus}-{ln.to_bus}"
        _check(ln.from_bus in known and ln.to_bus in known, f"{lt}: endpoint bus missing")
        _check(ln.r_pu >= 0 and ln.x_pu >= 0, f"{lt}: negative impedance")
        _check(ln.p_flow_max > 0 and ln.q_flow_max > 0, f"{lt}: flow limits must be positive")
    # radial: connected tree
    if len(mg.lines) != len(mg.buses) - 1 or len(mg.tree()) != len(mg.buses) - 1:
        raise NonRadialError(f"{tag}: line graph is not a connected radial tree "
                             f"({len(mg.buses)} buses, {len(mg.lines)} lines)")
    der_ids = [d.id for d in mg.ders] + [b.id for b in mg.batteries]
    _check(len(set(der_ids)) == len(der_ids), f"{tag}: duplicate DER/battery ids")
    for d in mg.ders:
        dt = f"{tag} DER {d.id}"
        _check(d.kind in DISPATCHABLE_KINDS + RENEWABLE_KINDS, f"{dt}: unknown kind {d.kind}")
        _check(d.bus in known, f"{dt}: bus {d.bus} does not exist")
        _check(d.p_min <= d.p_max and d.q_min <= d.q_max, f"{dt}: min exceeds max")
        _check(d.gen_price >= 0, f"{dt}: negative price")
        if d.dispatchable:
            _check(d.droop is not None, f"{dt}: dispatchable unit needs a droop spec")
            _check(d.profile_p is None and d.profile_q is None, f"{dt}: dispatchable unit cannot carry a profile")
            ds = d.droop
            _check_grid(dt, ds.mp_min, ds.mp_max, ds.mp_step, "p")
            _check_grid(dt, ds.mq_min, ds.mq_max, ds.mq_step, "q")
            _check(0 < ds.contribution_frac <= 1, f"{dt}: contribution_frac must be in (0, 1]")
        else:
            _check(d.profile_p is not None and len(d.profile_p) == T, f"{dt}: profile_p needs {T} entries")
            _check(d.profile_q is not None and len(d.profile_q) == T, f"{dt}: profile_q needs {T} entries")
    for b in mg.batteries:
        bt = f"{tag} battery {b.id}"
        _check(b.bus in known, f"{bt}: bus {b.bus} does not exist")
        _check(b.ch_max >= 0 and b.dch_max >= 0, f"{bt}: limits must be >= 0")
        _check(b.ch_price >= 0 and b.dch_price >= 0, f"{bt}: prices must be >= 0")
    seen = set()
    for ld in mg.loads:
        _check(ld.bus in known, f"{tag} load: bus {ld.bus} does not exist")
        _check(ld.bus not in seen, f"{tag} load: bus {ld.bus} listed twice")
        seen.add(ld.bus)
        _check(len(ld.p) == T and len(ld.q) == T, f"{tag} load at bus {ld.bus}: needs {T} entries")


# --- (de)serialization -----------------------------------------------------------

def _req(d: dict, key: str, where: str):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise ParseError(f"{where}: missing required field {key!r}") from None


def _floats(seq, scale: float, where: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) * scale for v in seq)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: expected a list of numbers") from None


def case_from_dict(doc: dict) -> NetworkCase:
    if not isinstance(doc, dict):
        raise ParseError("case: top level must be an object")
    try:
        return _case_from_dict(doc)
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, CaseError):
            raise
        raise ParseError(f"case: malformed value ({exc})") from None


def _case_from_dict(doc: dict) -> NetworkCase:
    system = _req(doc, "system", "case")
    base = float(_req(system, "power_base_mva", "system"))
    units = system.get("units", "pu")
    if units not in ("pu", "kW"):
        raise ParseError(f"system: units must be 'pu' or 'kW', got {units!r}")
    s = 1.0 / (base * 1000.0) if units == "kW" else 1.0
    T = int(_req(system, "horizon", "system"))
    prices_doc = _req(doc, "prices", "case")
    prices = PriceTable(float(_req(prices_doc, "shed_price", "prices")),
                        tuple(sorted((k, float(v)) for k, v in prices_doc.get("gen_price_defaults", {}).items())))
    mgs = []
    for mdoc in _req(doc, "microgrids", "case"):
        mid = str(_req(mdoc, "id", "microgrid"))
        where = f"microgrid {mid}"
        buses = tuple(Bus(str(_req(b, "id", where)), float(b.get("v_min_pu", 0.95)), float(b.get("v_max_pu", 1.05)),
                          float(b.get("v_ref_pu", 1.0)), float(b.get("shed_p_max", 0.0)) * s,
                          float(b.get("shed_q_max", 0.0)) * s) for b in _req(mdoc, "buses", where))
        lines = tuple(Line(str(_req(l, "from_bus", where)), str(_req(l, "to_bus", where)),
                           float(_req(l, "r_pu", where)), float(_req(l, "x_pu", where)),
                           float(_req(l, "p_flow_max", where)) * s, float(_req(l, "q_flow_max", where)) * s)
                      for l in _req(mdoc, "lines", where))
        ders = []
        for d in mdoc.get("ders", []):
            did = str(_req(d, "id", where))
            kind = str(_req(d, "kind", f"{where} DER {did}"))
            droop = None
            if d.get("droop") is not None:
                g = d["droop"]
                dw = f"{where} DER {did} droop"
                droop = DroopSpec(*(float(_req(g, k, dw)) for k in
                                    ("mp_min", "mp_max", "mp_step", "mq_min", "mq_max", "mq_step")),
                                  contribution_frac=float(g.get("contribution_frac", 0.20)))
            prof = d.get("profile")
            price = d.get("gen_price")
            ders.append(Der(
                did, kind, str(_req(d, "bus", f"{where} DER {did}")),
                float(d.get("p_min", 0.0)) * s, float(_req(d, "p_max", f"{where} DER {did}")) * s,
                float(d.get("q_min", 0.0)) * s, float(d.get("q_max", 0.0)) * s,
                float(price) if price is not None else prices.default_gen_price(kind), droop,
                _floats(prof["p"], s, f"{where} DER {did} profile") if prof else None,
                _floats(prof["q"], s, f"{where} DER {did} profile") if prof else None))
        bats = tuple(Battery(str(_req(b, "id", where)), str(_req(b, "bus", where)),
                             float(_req(b, "ch_max", where)) * s, float(_req(b, "dch_max", where)) * s,
                             float(_req(b, "ch_price", where)), float(_req(b, "dch_price", where)))
                     for b in mdoc.get("batteries", []))
        loads_doc = mdoc.get("loads", {})
        if not isinstance(loads_doc, dict):
            raise ParseError(f"{where}: loads must map bus id -> {{p, q}}")
        loads = tuple(BusLoad(str(bus), _floats(_req(v, "p", f"{where} load {bus}"), s, f"{where} load {bus}"),
                              _floats(_req(v, "q", f"{where} load {bus}"), s, f"{where} load {bus}"))
                      for bus, v in loads_doc.items())
        root = mdoc.get("root_bus")
        mgs.append(Microgrid(mid, buses, lines, tuple(ders), bats, loads,
                             float(mdoc.get("pcc_voltage_pu", 1.0)), float(mdoc.get("f_ref_hz", 60.0)),
                             str(root) if root is not None else None))
    links = tuple(InterfaceLink(str(_req(l, "mg_a", "interface")), str(_req(l, "mg_b", "interface")),
                                str(_req(l, "bus_a", "interface")), str(_req(l, "bus_b", "interface")),
                                *(float(_req(l, k, "interface")) * s for k in
                                  ("p_buy_max", "p_sell_max", "q_buy_max", "q_sell_max")))
                  for l in doc.get("interfaces", []))
    case = NetworkCase(
        name=str(doc.get("name", "")), power_base_mva=base, horizon=T,
        period_hours=float(system.get("period_hours", 1.0)), microgrids=tuple(mgs), interfaces=links,
        prices=prices, flow_mode=str(system.get("flow_mode", "directed")),
        droop_p_scale=float(system.get("droop_p_scale", 10.0 if units == "kW" else 0.001)) * s,
        droop_q_scale=float(system.get("droop_q_scale", 100.0 if units == "kW" else 0.01)) * s,
        f_min_hz=float(system.get("f_min_hz", 59.5)), f_max_hz=float(system.get("f_max_hz", 60.5)),
        notes=str(doc.get("notes", "")))
    validate_case(case)
    return case


def case_to_dict(case: NetworkCase, units: str = "pu") -> dict:
    """Inverse of :func:`case_from_dict`; ``units="pu"`` round-trips exactly."""
    if units not in ("pu", "kW"):
        raise ValueError("units must be 'pu' or 'kW'")
    k = case.base_kw if units == "kW" else 1.0

    def sc(v):
        return v * k

    mgs = []
    for mg in case.microgrids:
        ders = []
        for d in mg.ders:
            dd = {"id": d.id, "kind": d.kind, "bus": d.bus, "p_min": sc(d.p_min), "p_max": sc(d.p_max),
                  "q_min": sc(d.q_min), "q_max": sc(d.q_max), "gen_price": d.gen_price}
            if d.droop is not None:
                g = d.droop
                dd["droop"] = {"mp_min": g.mp_min, "mp_max": g.mp_max, "mp_step": g.mp_step,
                               "mq_min": g.mq_min, "mq_max": g.mq_max, "mq_step": g.mq_step,
                               "contribution_frac": g.contribution_frac}
            if d.profile_p is not None:
                dd["profile"] = {"p": [sc(v) for v in d.profile_p], "q": [sc(v) for v in d.profile_q]}
            ders.append(dd)
        m = {"id": mg.id, "pcc_voltage_pu": mg.pcc_voltage_pu, "f_ref_hz": mg.f_ref_hz,
             "buses": [{"id": b.id, "v_min_pu": b.v_min_pu, "v_max_pu": b.v_max_pu, "v_ref_pu": b.v_ref_pu,
                        "shed_p_max": sc(b.shed_p_max), "shed_q_max": sc(b.shed_q_max)} for b in mg.buses],
             "lines": [{"from_bus": l.from_bus, "to_bus": l.to_bus, "r_pu": l.r_pu, "x_pu": l.x_pu,
                        "p_flow_max": sc(l.p_flow_max), "q_flow_max": sc(l.q_flow_max)} for l in mg.lines],
             "ders": ders,
             "batteries": [{"id": b.id, "bus": b.bus, "ch_max": sc(b.ch_max), "dch_max": sc(b.dch_max),
                            "ch_price": b.ch_price, "dch_price": b.dch_price} for b in mg.batteries],
             "loads": {ld.bus: {"p": [sc(v) for v in ld.p], "q": [sc(v) for v in ld.q]} for ld in mg.loads}}
        if mg.root_bus is not None:
            m["root_bus"] = mg.root_bus
        mgs.append(m)
    doc = {
        "name": case.name,
        "system": {"power_base_mva": case.power_base_mva, "horizon": case.horizon,
                   "period_hours": case.period_hours, "units": units, "flow_mode": case.flow_mode,
                   "droop_p_scale": sc(case.droop_p_scale), "droop_q_scale": sc(case.droop_q_scale),
                   "f_min_hz": case.f_min_hz, "f_max_hz": case.f_max_hz},
        "prices": {"shed_price": case.prices.shed_price,
                   "gen_price_defaults": dict(case.prices.gen_price_defaults)},
        "microgrids": mgs,
        "interfaces": [{"mg_a": l.mg_a, "mg_b": l.mg_b, "bus_a": l.bus_a, "bus_b": l.bus_b,
                        "p_buy_max": sc(l.p_buy_max), "p_sell_max": sc(l.p_sell_max),
                        "q_buy_max": sc(l.q_buy_max), "q_sell_max": sc(l.q_sell_max)}
                       for l in case.interfaces],
    }
    if case.notes:
        doc["notes"] = case.notes
    return doc


BUNDLED = ("case_mini2", "case33_4mg", "case123_9mg")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("gridmesh") / "cases" / f"{name}.json"))


def load_case(path: str | Path) -> NetworkCase:
    """Read a case file (or a bundled case by name) and validate it."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        p = bundled_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read case file {p}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: invalid JSON ({exc})") from None
    return case_from_dict(doc)


def save_case(case: NetworkCase, path: str | Path, units: str = "pu") -> None:
    Path(path).write_text(json.dumps(case_to_dict(case, units), indent=1) + "\n")


# --- scenario derivation -----------------------------------------------------------

def with_horizon(case: NetworkCase, horizon: int, start: int = 0) -> NetworkCase:
    """Keep periods ``start .. start+horizon-1`` of every profile."""
    if not (horizon >= 1 and start >= 0 and start + horizon <= case.horizon):
        raise ValueError("horizon window outside the case horizon")
    sl = slice(start, start + horizon)

    def cut(seq):
        return None if seq is None else tuple(seq[sl])

    mgs = tuple(replace(mg,
                        ders=tuple(replace(d, profile_p=cut(d.profile_p), profile_q=cut(d.profile_q)) for d in mg.ders),
                        loads=tuple(replace(ld, p=cut(ld.p), q=cut(ld.q)) for ld in mg.loads))
                for mg in case.microgrids)
    return replace(case, horizon=horizon, microgrids=mgs)


def _map_droop(case: NetworkCase, fn) -> NetworkCase:
    mgs = tuple(replace(mg, ders=tuple(replace(d, droop=fn(d.droop)) if d.droop is not None else d
                                       for d in mg.ders))
                for mg in case.microgrids)
    return replace(case, microgrids=mgs)


def coarsen_droop(case: NetworkCase, levels: int) -> NetworkCase:
    """Re-grid every droop range onto at most ``levels`` evenly spaced values."""
    if levels < 1:
        raise ValueError("levels must be >= 1")

    def fn(g: DroopSpec) -> DroopSpec:
        def axis(lo, hi, step):
            if _levels(lo, hi, step) + 1 <= levels:
                return lo, hi, step
            if levels == 1:
                return lo, lo, step
            return lo, hi, (hi - lo) / (levels - 1)
        p = axis(g.mp_min, g.mp_max, g.mp_step)
        q = axis(g.mq_min, g.mq_max, g.mq_step)
        return DroopSpec(*p, *q, contribution_frac=g.contribution_frac)

    return _map_droop(case, fn)


def with_contribution_frac(case: NetworkCase, frac: float) -> NetworkCase:
    if not 0 < frac <= 1:
        raise ValueError("contribution_frac must be in (0, 1]")
    return _map_droop(case, lambda g: replace(g, contribution_frac=frac))


def scale_loads(case: NetworkCase, factor: float, renewables: float | None = None) -> NetworkCase:
    """Multiply every load (and optionally renewable profile) by a constant."""
    r = factor if renewables is None else renewables

    def sc(seq, k):
        return None if seq is None else tuple(v * k for v in seq)

    mgs = tuple(replace(mg,
                        loads=tuple(replace(ld, p=sc(ld.p, factor), q=sc(ld.q, factor)) for ld in mg.loads),
                        ders=tuple(replace(d, profile_p=sc(d.profile_p, r), profile_q=sc(d.profile_q, r))
                                   for d in mg.ders))
                for mg in case.microgrids)
    return replace(case, microgrids=mgs)


def iter_ders(case: NetworkCase) -> Iterable[tuple[Microgrid, Der]]:
    for mg in case.microgrids:
        for d in mg.ders:
            yield mg, d
