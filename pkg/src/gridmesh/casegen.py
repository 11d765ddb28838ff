"""Deterministic generators for the bundled cases.

Only topology, DER placement and DER capacities of ``case33_4mg`` come from
published data (IEEE 33-bus feeder and its DER table).  Every load/price
profile here is synthesized from a fixed seed and is not measured data.
``case123_9mg`` is fully synthetic: random radial trees with the same DER
mix, sized like the 123-bus feeder split into nine microgrids.

Run ``python3 scripts/make_cases.py`` to rewrite ``src/gridmesh/cases/``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

SEED = 20240601
V_KV = 12.66
BASE_MVA = 10.0
Z_BASE = V_KV ** 2 / BASE_MVA  # ohm

# IEEE 33-bus feeder (Baran & Wu): from, to, r [ohm], x [ohm]
IEEE33_LINES = [
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941), (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400), (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210), (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784), (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006), (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
]
# bus: (P kW, Q kVAR)
IEEE33_LOADS = {
    2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20), 7: (200, 100),
    8: (200, 100), 9: (60, 20), 10: (60, 20), 11: (45, 30), 12: (60, 35), 13: (60, 35),
    14: (120, 80), 15: (60, 10), 16: (60, 20), 17: (60, 20), 18: (90, 40), 19: (90, 40),
    20: (90, 40), 21: (90, 40), 22: (90, 40), 23: (90, 50), 24: (420, 200), 25: (420, 200),
    26: (60, 25), 27: (60, 25), 28: (60, 20), 29: (120, 70), 30: (200, 600), 31: (150, 70),
    32: (210, 100), 33: (60, 40),
}
ADDED_R_PU, ADDED_X_PU = 0.006, 0.01

# DER capacities (kW, kVAR) by kind
CAPACITY = {"PV": (200, 80), "WT": (150, 60), "MT": (400, 200), "FC": (300, 0), "CHP": (400, 300)}
DEFAULT_DROOP = {"mp_min": 0.02, "mp_max": 0.2, "mp_step": 0.0018,
               "mq_min": 0.05, "mq_max": 0.5, "mq_step": 0.0045, "contribution_frac": 0.20}
GEN_PRICE = {"MT": 0.11, "FC": 0.13, "CHP": 0.08}  # $/kWh, synthetic

# daily shapes (24 h), synthetic
LOAD_SHAPE = np.array([0.55, 0.52, 0.50, 0.50, 0.52, 0.58, 0.68, 0.80, 0.88, 0.92, 0.95, 0.97,
                       0.96, 0.95, 0.94, 0.95, 0.97, 1.00, 0.99, 0.95, 0.88, 0.78, 0.68, 0.60])
PV_SHAPE = np.array([0, 0, 0, 0, 0, 0.03, 0.12, 0.28, 0.46, 0.62, 0.75, 0.83,
                     0.86, 0.83, 0.74, 0.60, 0.42, 0.23, 0.07, 0, 0, 0, 0, 0])


def _r(x: float) -> float:
    return float(round(x, 6))


def _wind(rng: np.random.Generator, T: int = 24) -> np.ndarray:
    # AR(1) wind availability clipped to [0.05, 0.95]
    w = np.empty(T)
    level = 0.45
    for t in range(T):
        level = 0.45 + 0.75 * (level - 0.45) + rng.normal(0, 0.08)
        w[t] = min(max(level, 0.05), 0.95)
    return w


def _der(did, kind, bus, rng, T=24, price_jitter=0.0):
    p, q = CAPACITY[kind]
    d = {"id": did, "kind": kind, "bus": str(bus), "p_min": 0.0, "p_max": float(p),
         "q_min": 0.0, "q_max": float(q)}
    if kind in GEN_PRICE:
        d["gen_price"] = _r(GEN_PRICE[kind] * (1.0 + price_jitter))
        d["droop"] = dict(DEFAULT_DROOP)
    else:
        shape = PV_SHAPE if kind == "PV" else _wind(rng, T)
        d["profile"] = {"p": [_r(p * s) for s in shape], "q": [_r(q * s) for s in shape]}
    return d


def _loads(bus_kw: dict, shape: np.ndarray, rng: np.random.Generator) -> dict:
    out = {}
    for bus, (p, q) in bus_kw.items():
        noise = 1.0 + rng.normal(0, 0.02, size=shape.size)
        out[str(bus)] = {"p": [_r(p * s * e) for s, e in zip(shape, noise)],
                         "q": [_r(q * s * e) for s, e in zip(shape, noise)]}
    return out


def _buses(ids, loads_kw):
    return [{"id": str(b), "v_min_pu": 0.95, "v_max_pu": 1.05, "v_ref_pu": 1.0,
             "shed_p_max": float(loads_kw.get(b, (0, 0))[0]), "shed_q_max": float(loads_kw.get(b, (0, 0))[1])}
            for b in ids]


def _line(a, b, r, x, pmax=2000.0, qmax=1500.0):
    return {"from_bus": str(a), "to_bus": str(b), "r_pu": _r(r), "x_pu": _r(x),
            "p_flow_max": pmax, "q_flow_max": qmax}


def _battery(bid, bus, kw=100.0):
    return {"id": bid, "bus": str(bus), "ch_max": kw, "dch_max": kw, "ch_price": 0.02, "dch_price": 0.10}


def _system(T, period_hours, flow_mode="symmetric"):
    return {"power_base_mva": BASE_MVA, "horizon": T, "period_hours": period_hours, "units": "kW",
            "flow_mode": flow_mode, "droop_p_scale": 10.0, "droop_q_scale": 100.0,
            "f_min_hz": 59.5, "f_max_hz": 60.5}


def make_case33_4mg() -> dict:
    rng = np.random.default_rng(SEED)
    load_scale = 0.45  # the original feeder load exceeds the islanded DER fleet
    ieee = {b: (p * load_scale, q * load_scale) for b, (p, q) in IEEE33_LOADS.items()}
    # MG3/MG4 live on added buses 34..53 with synthetic loads
    added = {b: (70.0, 30.0) for b in range(35, 44)}
    added.update({b: (85.0, 40.0) for b in range(44, 54)})
    allloads = {**ieee, **added}

    mg1_buses = list(range(19, 34))
    mg2_buses = list(range(1, 19))
    mg3_buses = list(range(34, 44))
    mg4_buses = list(range(44, 54))
    lines = {tuple(sorted((a, b))): (r / Z_BASE, x / Z_BASE) for a, b, r, x in IEEE33_LINES}

    def lines_within(ids):
        s = set(ids)
        return [_line(a, b, *lines[(a, b)]) for (a, b) in sorted(lines) if a in s and b in s]

    # laterals 19-22, 23-25 and 26-33 become one islanded MG through two added ties
    mg1_lines = lines_within(mg1_buses) + [_line(19, 23, ADDED_R_PU, ADDED_X_PU, 1000.0, 800.0),
                                           _line(23, 26, ADDED_R_PU, ADDED_X_PU, 1000.0, 800.0)]
    mg2_lines = lines_within(mg2_buses)
    mg3_lines = [_line(b, b + 1, ADDED_R_PU, ADDED_X_PU, 1000.0, 800.0) for b in range(34, 43)]
    mg4_lines = [_line(b, b + 1, ADDED_R_PU, ADDED_X_PU, 1000.0, 800.0) for b in range(44, 53)]

    placement = {
        "MG1": [("FC19", "FC", 19), ("CHP21", "CHP", 21), ("MT24", "MT", 24), ("MT32", "MT", 32)],
        "MG2": [("PV2", "PV", 2), ("WT5", "WT", 5), ("CHP6", "CHP", 6), ("WT7", "WT", 7),
                ("WT14", "WT", 14), ("CHP16", "CHP", 16)],
        "MG3": [("PV34", "PV", 34), ("CHP37", "CHP", 37), ("FC39", "FC", 39), ("WT40", "WT", 40)],
        "MG4": [("CHP44", "CHP", 44), ("PV45", "PV", 45), ("MT47", "MT", 47), ("FC49", "FC", 49),
                ("MT51", "MT", 51), ("PV53", "PV", 53)],
    }
    jitter = {"MG1": 0.10, "MG2": -0.10, "MG3": 0.05, "MG4": 0.0}
    bat_bus = {"MG1": 30, "MG2": 12, "MG3": 38, "MG4": 50}
    mgs = []
    for mid, buses, mlines in (("MG1", mg1_buses, mg1_lines), ("MG2", mg2_buses, mg2_lines),
                               ("MG3", mg3_buses, mg3_lines), ("MG4", mg4_buses, mg4_lines)):
        bl = {b: allloads[b] for b in buses if b in allloads}
        mgs.append({
            "id": mid, "pcc_voltage_pu": 1.0, "f_ref_hz": 60.0, "root_bus": str(buses[0]),
            "buses": _buses(buses, {b: (p, q) for b, (p, q) in bl.items()}),
            "lines": mlines,
            "ders": [_der(did, kind, bus, rng, price_jitter=jitter[mid]) for did, kind, bus in placement[mid]],
            "batteries": [_battery(f"BAT{bat_bus[mid]}", bat_bus[mid])],
            "loads": _loads(bl, LOAD_SHAPE, rng),
        })
    interfaces = [
        {"mg_a": "MG1", "mg_b": "MG2", "bus_a": "19", "bus_b": "2"},
        {"mg_a": "MG2", "mg_b": "MG3", "bus_a": "18", "bus_b": "34"},
        {"mg_a": "MG3", "mg_b": "MG4", "bus_a": "43", "bus_b": "44"},
    ]
    for link in interfaces:
        link.update({"p_buy_max": 300.0, "p_sell_max": 300.0, "q_buy_max": 150.0, "q_sell_max": 150.0})
    return {
        "name": "case33_4mg",
        "notes": ("IEEE 33-bus feeder split into four islanded microgrids plus 20 added buses "
                  "(r=0.006, x=0.01 p.u.). DER placement/capacities follow the published table; "
                  "IEEE loads scaled by 0.45, all profiles and prices synthesized (seed %d)." % SEED),
        "system": _system(24, 1.0),
        "prices": {"shed_price": 1.0, "gen_price_defaults": dict(GEN_PRICE)},
        "microgrids": mgs,
        "interfaces": interfaces,
    }


def make_case_mini2() -> dict:
    """Two 3-bus microgrids, 4 six-hour periods, one MT each; tiny droop grids."""
    droop = {"mp_min": 0.02, "mp_max": 0.2, "mp_step": 0.09,
             "mq_min": 0.05, "mq_max": 0.05, "mq_step": 0.0045, "contribution_frac": 0.20}
    shape = [0.6, 0.9, 1.0, 0.8]
    pv = [0.0, 0.7, 0.5, 0.0]
    wt = [0.5, 0.3, 0.4, 0.6]

    def mg(mid, price, load_kw, ren_kind, ren):
        cap_p, cap_q = CAPACITY[ren_kind]
        loads = {"2": (load_kw * 0.6, load_kw * 0.25), "3": (load_kw * 0.4, load_kw * 0.2)}
        return {
            "id": mid, "pcc_voltage_pu": 1.0, "f_ref_hz": 60.0, "root_bus": "1",
            "buses": _buses([1, 2, 3], {2: loads["2"], 3: loads["3"]}),
            "lines": [_line(1, 2, 0.01, 0.02, 1000.0, 800.0), _line(2, 3, 0.01, 0.02, 1000.0, 800.0)],
            "ders": [{"id": f"{mid}_MT", "kind": "MT", "bus": "1", "p_min": 0.0, "p_max": 400.0,
                      "q_min": 0.0, "q_max": 200.0, "gen_price": price, "droop": dict(droop)},
                     {"id": f"{mid}_{ren_kind}", "kind": ren_kind, "bus": "3", "p_min": 0.0,
                      "p_max": float(cap_p), "q_min": 0.0, "q_max": float(cap_q),
                      "profile": {"p": [_r(cap_p * s) for s in ren], "q": [_r(cap_q * s) for s in ren]}}],
            "batteries": [],
            "loads": {b: {"p": [_r(p * s) for s in shape], "q": [_r(q * s) for s in shape]}
                      for b, (p, q) in loads.items()},
        }

    return {
        "name": "case_mini2",
        "notes": "Synthetic two-microgrid oracle case: MG1 cheap, MG2 expensive generation.",
        "system": _system(4, 6.0),
        "prices": {"shed_price": 1.0, "gen_price_defaults": dict(GEN_PRICE)},
        "microgrids": [mg("MG1", 0.08, 380.0, "PV", pv), mg("MG2", 0.16, 420.0, "WT", wt)],
        "interfaces": [{"mg_a": "MG1", "mg_b": "MG2", "bus_a": "3", "bus_b": "3",
                        "p_buy_max": 150.0, "p_sell_max": 150.0, "q_buy_max": 80.0, "q_sell_max": 80.0}],
    }


def make_case123_9mg() -> dict:
    """Nine synthetic radial microgrids totalling 123 buses."""
    rng = np.random.default_rng(SEED + 123)
    sizes = [14, 14, 14, 14, 14, 14, 13, 13, 13]
    kinds = ["MT", "FC", "CHP", "PV", "WT"]
    mgs = []
    bus_no = 1
    for k, n in enumerate(sizes):
        mid = f"MG{k + 1}"
        ids = list(range(bus_no, bus_no + n))
        bus_no += n
        lines = []
        for j in range(1, n):
            parent = ids[int(rng.integers(max(0, j - 3), j))]
            r = float(rng.uniform(0.004, 0.03))
            lines.append(_line(parent, ids[j], r, r * float(rng.uniform(0.8, 1.6)), 1500.0, 1000.0))
        loads_kw = {b: (_r(float(rng.uniform(30, 90))), _r(float(rng.uniform(10, 40)))) for b in ids[1:]}
        ders = []
        # two dispatchable units and two renewables per microgrid
        disp = [kinds[int(rng.integers(0, 3))] for _ in range(2)]
        ren = [kinds[3 + int(rng.integers(0, 2))] for _ in range(2)]
        for kind in disp + ren:
            bus = ids[int(rng.integers(0, n))]
            ders.append(_der(f"{kind}{bus}", kind, bus, rng, price_jitter=float(rng.uniform(-0.15, 0.15))))
        # ids must be unique even if two units land on one bus
        seen = {}
        for d in ders:
            seen[d["id"]] = seen.get(d["id"], 0) + 1
            if seen[d["id"]] > 1:
                d["id"] = f"{d['id']}_{seen[d['id']]}"
        mgs.append({
            "id": mid, "pcc_voltage_pu": 1.0, "f_ref_hz": 60.0, "root_bus": str(ids[0]),
            "buses": _buses(ids, loads_kw), "lines": lines, "ders": ders,
            "batteries": [_battery(f"BAT{ids[n // 2]}", ids[n // 2], 80.0)],
            "loads": _loads(loads_kw, LOAD_SHAPE, rng),
        })
    pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (0, 4), (2, 6)]
    interfaces = []
    for a, b in pairs:
        ma, mb = mgs[a], mgs[b]
        interfaces.append({"mg_a": ma["id"], "mg_b": mb["id"],
                           "bus_a": ma["buses"][-1]["id"], "bus_b": mb["buses"][0]["id"],
                           "p_buy_max": 250.0, "p_sell_max": 250.0, "q_buy_max": 120.0, "q_sell_max": 120.0})
    return {
        "name": "case123_9mg",
        "notes": ("Synthetic nine-microgrid, 123-bus system (random radial trees, seed %d); "
                  "not the IEEE 123-bus data." % (SEED + 123)),
        "system": _system(24, 1.0),
        "prices": {"shed_price": 1.0, "gen_price_defaults": dict(GEN_PRICE)},
        "microgrids": mgs,
        "interfaces": interfaces,
    }


GENERATORS = {"case_mini2": make_case_mini2, "case33_4mg": make_case33_4mg, "case123_9mg": make_case123_9mg}


def write_bundled(directory: str | Path) -> list[Path]:
    out = []
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, fn in GENERATORS.items():
        p = d / f"{name}.json"
        p.write_text(json.dumps(fn(), indent=1) + "\n")
        out.append(p)
    return out
