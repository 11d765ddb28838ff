"""Discrete-event simulation of the coordinator/worker system, plus replay.

Workers only ever see ``(case slice, multiplier snapshot)``; the coordinator
only sees :class:`~gridmesh.daslr.Arrival` messages.  Compute time is drawn
from a :class:`DelayModel`, never measured, so a run is a pure function of
its inputs and seed.  With ``GRIDMESH_THREADS=n`` (or ``RunOptions.threads``)
subproblem solves are dispatched to a thread pool when they start and
collected when their simulated finish event fires; the event order and the
log are unchanged, only wall-clock time differs.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
import os
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import daslr as dl
from .admm import AdmmOptions, AdmmWorker, admm_consensus, new_admm_state
from .builder import Schedule, build_centralized, mg_costs
from .case import NetworkCase
from .milp import MilpOptions, Status, get_solver

LOG_COLUMNS = ("event_seq", "sim_time", "actor", "event", "r", "stepsize", "violation_norm",
               "feasible_cost", "dual_bound", "gap")
METHODS = ("daslr", "admm", "centralized")


class NoFeasibleFound(RuntimeError):
    def __init__(self, msg: str, log: "RunLog | None" = None):
        super().__init__(msg)
        self.log = log


class CorruptLog(ValueError):
    pass


# --- delays ------------------------------------------------------------------------

@dataclass(frozen=True)
class DelayModel:
    """Simulated seconds of compute per subproblem solve.

    ``fixed``: every solve takes ``value``.  ``uniform``: draws from
    ``[low, high]`` with one seeded stream per microgrid.  ``table``:
    per-microgrid constants, ``default`` for unlisted ones.
    """

    kind: str = "fixed"
    value: float = 1.0
    low: float = 0.5
    high: float = 1.5
    table: tuple[tuple[str, float], ...] = ()
    default: float = 1.0
    broadcast_latency: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "table"):
            raise ValueError(f"unknown delay model kind {self.kind!r}")
        vals = {"fixed": [self.value], "uniform": [self.low, self.high],
                "table": [v for _, v in self.table] + [self.default]}[self.kind]
        if any(not v > 0 for v in vals):
            raise ValueError("delays must be positive")
        if self.kind == "uniform" and self.high < self.low:
            raise ValueError("uniform delay needs low <= high")
        if self.broadcast_latency < 0:
            raise ValueError("broadcast latency must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "DelayModel":
        """``fixed:1``, ``uniform:0.5:2``, ``table:MG1=1,MG2=5,*=5``."""
        kind, _, rest = text.partition(":")
        try:
            if kind == "fixed":
                return cls("fixed", value=float(rest or 1.0))
            if kind == "uniform":
                lo, hi = (float(x) for x in rest.split(":"))
                return cls("uniform", low=lo, high=hi)
            if kind == "table":
                entries, default = [], 1.0
                for item in filter(None, rest.split(",")):
                    k, v = item.split("=")
                    if k.strip() == "*":
                        default = float(v)
                    else:
                        entries.append((k.strip(), float(v)))
                return cls("table", table=tuple(entries), default=default)
        except ValueError as exc:
            raise ValueError(f"bad delay model {text!r}: {exc}") from None
        raise ValueError(f"unknown delay model kind {kind!r}")

    def sampler(self, mg_ids, seed: int):
        table = dict(self.table)
        rngs = {m: np.random.default_rng([seed, i]) for i, m in enumerate(mg_ids)}

        def draw(mg_id: str) -> float:
            if self.kind == "fixed":
                return self.value
            if self.kind == "table":
                return table.get(mg_id, self.default)
            return float(rngs[mg_id].uniform(self.low, self.high))
        return draw


# --- options and log ---------------------------------------------------------------

@dataclass
class RunOptions:
    method: str = "daslr"
    max_iters: int = 40
    gap_tol: float = 0.002
    seed: int = 0
    delay: DelayModel = field(default_factory=DelayModel)
    daslr: dl.DaslrOptions = field(default_factory=dl.DaslrOptions)
    admm: AdmmOptions = field(default_factory=AdmmOptions)
    solver: str = "kernel"            # subproblems
    restore_solver: str | None = None  # restoration; None: same as ``solver``
    threads: int | None = None         # None: GRIDMESH_THREADS or simulated only

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class RunLog:
    method: str
    case: str
    seed: int
    rows: list[dict] = field(default_factory=list)
    details: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, sim_time, actor, event, r=None, stepsize=None, violation_norm=None,
            feasible_cost=math.inf, dual_bound=-math.inf, gap=math.nan) -> dict:
        row = dict(event_seq=len(self.rows), sim_time=float(sim_time), actor=actor, event=event, r=r,
                   stepsize=stepsize, violation_norm=violation_norm, feasible_cost=float(feasible_cost),
                   dual_bound=float(dual_bound), gap=float(gap))
        self.rows.append(row)
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
        return buf.getvalue()

    def details_jsonl(self) -> str:
        head = {"kind": "meta", "method": self.method, "case": self.case, "seed": self.seed, **self.meta}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(d, sort_keys=True) for d in self.details]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "runlog") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        p_csv, p_json = out / f"{stem}.csv", out / f"{stem}.jsonl"
        p_csv.write_text(self.to_csv())
        p_json.write_text(self.details_jsonl())
        return p_csv, p_json

    @classmethod
    def read(cls, csv_path: str | Path, jsonl_path: str | Path | None = None) -> "RunLog":
        csv_path = Path(csv_path)
        jsonl_path = Path(jsonl_path) if jsonl_path else csv_path.with_suffix(".jsonl")
        try:
            lines = [json.loads(s) for s in jsonl_path.read_text().splitlines() if s.strip()]
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptLog(f"cannot read log details {jsonl_path}: {exc}") from None
        if not lines or lines[0].get("kind") != "meta":
            raise CorruptLog("log details must start with a meta record")
        head = dict(lines[0])
        log = cls(head.pop("method"), head.pop("case"), head.pop("seed"))
        head.pop("kind")
        log.meta = head
        log.details = lines[1:]
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
                raise CorruptLog(f"unexpected RunLog header {reader.fieldnames}")
            for rec in reader:
                row = dict(rec)
                row["event_seq"] = int(row["event_seq"])
                row["r"] = int(row["r"]) if row["r"] else None
                for c in ("sim_time", "stepsize", "violation_norm", "feasible_cost", "dual_bound", "gap"):
                    row[c] = float(row[c]) if row[c] != "" else None
                log.rows.append(row)
        return log

    def events(self, kind: str) -> list[dict]:
        return [r for r in self.rows if r["event"] == kind]


@dataclass
class RunResult:
    schedule: Schedule
    log: RunLog
    feasible_cost: float
    dual_bound: float
    gap: float
    iterations: int
    per_mg_costs: dict[str, float]
    lam_p: np.ndarray | None = None
    lam_q: np.ndarray | None = None

    def __iter__(self):  # allows ``schedule, log = run(...)``
        return iter((self.schedule, self.log))

    def summary(self) -> dict:
        return {"method": self.log.method, "case": self.log.case, "seed": self.log.seed,
                "iterations": self.iterations, "feasible_cost": self.feasible_cost,
                "dual_bound": self.dual_bound, "gap": self.gap, "per_mg_costs": self.per_mg_costs}


def per_mg_costs(case: NetworkCase, schedule: Schedule, lam_p=None, lam_q=None) -> dict[str, float]:
    """Own cost of each microgrid plus exchange settlement at the given multipliers."""
    own = mg_costs(case, schedule)
    if lam_p is None:
        return own
    settle = dl.settlement_costs(case, schedule, lam_p, lam_q)
    return {m: float(own[m] + settle[m]) for m in case.mg_ids}


# --- event queue -------------------------------------------------------------------

@dataclass(order=True)
class _Event:
    time: float
    mg_index: int
    seq: int
    kind: str = field(compare=False)
    mg_id: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


class EventQueue:
    """Heap ordered by ``(time, mg index, sequence number)``."""

    def __init__(self):
        self._heap: list[_Event] = []
        self._seq = 0
        self.now = 0.0

    def push(self, time: float, mg_index: int, kind: str, mg_id: str, **payload) -> None:
        heapq.heappush(self._heap, _Event(time, mg_index, self._seq, kind, mg_id, payload))
        self._seq += 1

    def pop(self) -> _Event:
        ev = heapq.heappop(self._heap)
        if ev.time < self.now:
            raise RuntimeError("event queue went back in time")
        self.now = ev.time
        return ev

    def __len__(self):
        return len(self._heap)


def _thread_count(opts: RunOptions) -> int:
    if opts.threads is not None:
        return max(int(opts.threads), 0)
    env = os.environ.get("GRIDMESH_THREADS", "").strip()
    return max(int(env), 0) if env else 0


class _Inline:
    """Future-like wrapper used when no thread pool is configured."""

    def __init__(self, fn, *args):
        self._value = fn(*args)

    def result(self):
        return self._value


# --- DA-SLR ------------------------------------------------------------------------

@dataclass
class _Worker:
    mg_id: str
    index: int
    solver: dl.SubproblemSolver
    busy: bool = False
    latest: tuple | None = None   # (lam_p, lam_q, version) most recently received
    accepted: Schedule | None = None
    resolves: int = 0
    pending: Future | _Inline | None = None
    snapshot: tuple | None = None


def _arrival_record(arrival: dl.Arrival) -> list:
    return [[k[0], k[1], k[2], v] for k, v in arrival.exchange]


def _run_daslr(case: NetworkCase, opts: RunOptions) -> RunResult:
    dopt = opts.daslr
    K = len(case.mg_ids)
    search_every = dopt.search_every or K
    sub_opts = MilpOptions(gap_tol=dopt.sub_gap, node_limit=dopt.node_limit)
    cost_scale = dopt.cost_scale if dopt.cost_scale is not None else dl.default_cost_scale(case)
    dopt = dl.DaslrOptions(**{**asdict(dopt), "cost_scale": cost_scale, "max_iters": opts.max_iters,
                              "gap_tol": opts.gap_tol})
    log = RunLog("daslr", case.name, opts.seed)
    log.meta = {"horizon": case.horizon, "directed": [list(d) for d in case.directed_interfaces()],
                "mg_ids": list(case.mg_ids), "M": dopt.M, "p": dopt.p, "gamma_min": dopt.gamma_min,
                "gamma_max": dopt.gamma_max, "c0": dopt.c0, "cost_scale": cost_scale, "e0": dopt.e0,
                "delay": asdict(opts.delay)}
    state = dl.new_state(case, dopt)
    workers = {m: _Worker(m, i, dl.SubproblemSolver(case, m, opts.solver, sub_opts))
               for i, m in enumerate(case.mg_ids)}
    bound_solvers = {m: dl.SubproblemSolver(case, m, opts.solver, sub_opts) for m in case.mg_ids}
    restorer = dl.Restorer(case, opts.restore_solver or opts.solver, sub_opts)
    draw = opts.delay.sampler(case.mg_ids, opts.seed)
    latency = opts.delay.broadcast_latency
    q = EventQueue()
    n_threads = _thread_count(opts)
    pool = ThreadPoolExecutor(n_threads) if n_threads > 0 else None
    total_compute = 0.0
    version = 0
    stopped = False
    starts = {m: 0 for m in case.mg_ids}

    def broadcast():
        lam = (state.lam_p.copy(), state.lam_q.copy(), version)
        for w in workers.values():
            q.push(q.now + latency, w.index, "broadcast", w.mg_id, lam=lam)

    def start(w: _Worker):
        nonlocal total_compute
        w.busy = True
        w.snapshot = w.latest
        lp, lq, _ = w.snapshot
        w.pending = pool.submit(w.solver.solve, lp, lq) if pool else _Inline(w.solver.solve, lp, lq)
        d = draw(w.mg_id)
        total_compute += d
        starts[w.mg_id] += 1
        q.push(q.now + d, w.index, "finished", w.mg_id, compute=d)

    def search():
        dl.restore_feasibility(state, case, restorer, directions=dopt.restore_directions)
        dl.dual_value(state, case, bound_solvers)
        g = dl.gap(state) if state.best_feasible is not None else math.nan
        log.add(q.now, "coordinator", "search", state.r, state.e, state.last_violation_norm,
                state.best_cost, state.dual_bound, g)
        return g

    broadcast()
    try:
        while len(q):
            ev = q.pop()
            w = workers[ev.mg_id]
            if ev.kind == "broadcast":
                w.latest = ev.payload["lam"]
                if not w.busy and not stopped:
                    start(w)
                continue
            # solve finished
            sched, lag, _bound, status = w.pending.result()
            w.pending = None
            if stopped:
                w.busy = False
                continue
            lp, lq, snap_version = w.snapshot
            fresh = w.latest[2] == snap_version
            if w.accepted is not None and not fresh:
                prev = w.solver.lagrangian(w.accepted, lp, lq)
                if not lag < prev - 1e-9 * (1.0 + abs(prev)):
                    w.resolves += 1
                    log.add(q.now, w.mg_id, "reject", state.r, state.e, state.last_violation_norm,
                            state.best_cost, state.dual_bound)
                    start(w)
                    continue
            w.busy = False
            w.accepted = sched
            arrival = dl.make_arrival(w.mg_id, sched, snap_version, resolves=w.resolves,
                                      status=status.value, sim_compute=ev.payload["compute"])
            w.resolves = 0
            log.add(q.now, w.mg_id, "solve", state.r, state.e, state.last_violation_norm,
                    state.best_cost, state.dual_bound)
            dl.update_multipliers(state, case, arrival, dopt)
            version += 1
            gp, gq = state.last_g
            log.details.append({"kind": "update", "r": state.r, "sim_time": q.now, "mg": w.mg_id,
                                "lam_version": snap_version, "exchange": _arrival_record(arrival),
                                "g_norm": dl.violation_norm(gp, gq), "e": state.e, "gamma": state.last_gamma,
                                "steps": state.steps, "lam_p": state.lam_p.tolist(),
                                "lam_q": state.lam_q.tolist()})
            log.add(q.now, "coordinator", "update", state.r, state.e, dl.violation_norm(gp, gq),
                    state.best_cost, state.dual_bound)
            done = state.r >= opts.max_iters
            # zero violation once every MG has reported: the latest solutions are
            # coupling-consistent Lagrangian minimisers, hence optimal
            consensus = all(v >= 0 for v in state.stamps.values()) and not (gp.any() or gq.any())
            if state.r % search_every == 0 or done or consensus:
                g = search()
                done = done or consensus or (math.isfinite(g) and g <= opts.gap_tol)
            if done:
                stopped = True
                log.add(q.now, "coordinator", "stop", state.r, state.e, state.last_violation_norm,
                        state.best_cost, state.dual_bound,
                        dl.gap(state) if state.best_feasible is not None else math.nan)
                continue
            broadcast()
    except dl.SubproblemFailed as exc:
        raise NoFeasibleFound(f"{case.name}: {exc}", log) from None
    finally:
        if pool:
            pool.shutdown(wait=True)
    log.meta["total_compute"] = total_compute
    log.meta["starts"] = starts
    if state.best_feasible is None:
        raise NoFeasibleFound(f"{case.name}: no feasible schedule restored in {state.r} iterations", log)
    cost, sched = state.best_feasible
    return RunResult(sched, log, cost, state.dual_bound, dl.gap(state), state.r,
                     per_mg_costs(case, sched, state.lam_p, state.lam_q), state.lam_p, state.lam_q)


# --- ADMM --------------------------------------------------------------------------

def _run_admm(case: NetworkCase, opts: RunOptions) -> RunResult:
    aopt = AdmmOptions(**{**asdict(opts.admm), "max_iters": opts.max_iters})
    sub_opts = MilpOptions(gap_tol=aopt.sub_gap)
    log = RunLog("admm", case.name, opts.seed)
    log.meta = {"rho": aopt.rho, "segments": aopt.segments, "relax": aopt.relax, "delay": asdict(opts.delay)}
    st = new_admm_state(case, aopt)
    workers = {m: AdmmWorker(case, m, aopt) for m in case.mg_ids}
    bound_solvers = {m: dl.SubproblemSolver(case, m, opts.solver, sub_opts) for m in case.mg_ids}
    restorer = dl.Restorer(case, opts.restore_solver or opts.solver, sub_opts)
    draw = opts.delay.sampler(case.mg_ids, opts.seed)
    best: tuple[float, Schedule] | None = None
    dual = -math.inf
    now = 0.0
    total_compute = 0.0
    n_threads = _thread_count(opts)
    pool = ThreadPoolExecutor(n_threads) if n_threads > 0 else None
    reported_divergence = False
    try:
        while st.k < aopt.max_iters:
            if pool:
                futs = {m: pool.submit(workers[m].solve, st) for m in case.mg_ids}
                fresh = {m: futs[m].result() for m in case.mg_ids}
            else:
                fresh = {m: workers[m].solve(st) for m in case.mg_ids}
            st.local_costs = {m: workers[m].last_cost for m in case.mg_ids}
            delays = {m: draw(m) for m in case.mg_ids}
            total_compute += sum(delays.values())
            r = st.k
            for m in sorted(case.mg_ids, key=lambda m: (delays[m], case.mg_ids.index(m))):
                log.add(now + delays[m], m, "solve", r, st.rho, None, best[0] if best else math.inf, dual)
            now += max(delays.values()) + opts.delay.broadcast_latency
            admm_consensus(st, case, fresh, aopt)
            log.details.append({"kind": "round", "r": st.k, "primal": st.primal_history[-1],
                                "dual": st.dual_history[-1], "local_cost": st.total_cost,
                                "z_p": st.z_p.tolist(), "y_p": st.y_p.tolist()})
            log.add(now, "coordinator", "update", st.k, st.rho, st.primal_history[-1],
                    best[0] if best else math.inf, dual)
            lat = dl.CoordinatorState(st.y_p, st.y_q, latest=st.latest)
            res = dl.restore_feasibility(lat, case, restorer)
            if res is not None and (best is None or res[0] < best[0]):
                best = res
            dual = max(dual, dl.dual_value(lat, case, bound_solvers))
            g = (best[0] - dual) / abs(best[0]) if best else math.nan
            log.add(now, "coordinator", "search", st.k, st.rho, st.primal_history[-1],
                    best[0] if best else math.inf, dual, g)
            if st.diverged and not reported_divergence:
                reported_divergence = True
                log.add(now, "coordinator", "diverged", st.k, st.rho, st.primal_history[-1],
                        best[0] if best else math.inf, dual, g)
            if (st.primal_history[-1] <= aopt.tol and st.dual_history[-1] <= aopt.tol) \
                    or (math.isfinite(g) and g <= opts.gap_tol):
                break
    except dl.SubproblemFailed as exc:
        raise NoFeasibleFound(f"{case.name}: {exc}", log) from None
    finally:
        if pool:
            pool.shutdown(wait=True)
    log.add(now, "coordinator", "stop", st.k, st.rho, st.primal_history[-1] if st.primal_history else None,
            best[0] if best else math.inf, dual, (best[0] - dual) / abs(best[0]) if best else math.nan)
    log.meta["total_compute"] = total_compute
    log.meta["diverged"] = st.diverged
    if best is None:
        raise NoFeasibleFound(f"{case.name}: ADMM restored no feasible schedule in {st.k} rounds", log)
    return RunResult(best[1], log, best[0], dual, (best[0] - dual) / abs(best[0]), st.k,
                     per_mg_costs(case, best[1], st.y_p, st.y_q), st.y_p, st.y_q)


# --- centralized -------------------------------------------------------------------

def _run_centralized(case: NetworkCase, opts: RunOptions) -> RunResult:
    log = RunLog("centralized", case.name, opts.seed)
    built = build_centralized(case)
    sol = get_solver(opts.solver).solve(built.model, MilpOptions(gap_tol=min(opts.gap_tol, 1e-4)))
    if sol.status is not Status.OPTIMAL:
        log.add(0.0, "coordinator", "solve", 1)
        raise NoFeasibleFound(f"{case.name}: centralized solve ended {sol.status.value}", log)
    g = sol.gap
    log.add(0.0, "coordinator", "solve", 1, None, None, sol.objective, sol.bound, g)
    sched = built.schedule(sol.values, sol.objective)
    return RunResult(sched, log, sol.objective, sol.bound, g, 1, per_mg_costs(case, sched))


def run(case: NetworkCase, method: str = "daslr", opts: RunOptions | None = None) -> RunResult:
    """Run one method to termination; identical inputs and seed give an identical RunLog."""
    opts = opts or RunOptions(method=method)
    if method != opts.method:
        opts = RunOptions(**{**opts.__dict__, "method": method})
    return {"daslr": _run_daslr, "admm": _run_admm, "centralized": _run_centralized}[method](case, opts)


# --- replay ------------------------------------------------------------------------

@dataclass
class ReplayReport:
    updates: int
    mismatches: list[tuple[int, str]]
    max_stepsize_rel_err: float

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def __str__(self) -> str:
        if self.ok:
            return f"verified, 0 mismatches ({self.updates} updates, stepsize law rel err " \
                   f"{self.max_stepsize_rel_err:.2e})"
        r, what = self.mismatches[0]
        return f"{len(self.mismatches)} mismatches; first at r={r}: {what}"


class _CaseShape:
    """Just enough of a case for the violation arithmetic."""

    def __init__(self, horizon: int, directed):
        self.horizon = horizon
        self._directed = [tuple(d) for d in directed]

    def directed_interfaces(self):
        return self._directed


def replay(log: RunLog | str | Path, stepsize_tol: float = 1e-12) -> ReplayReport:
    """Re-derive every multiplier update from the logged arrivals and compare bitwise."""
    if not isinstance(log, RunLog):
        log = RunLog.read(log)
    if log.method != "daslr":
        raise CorruptLog(f"replay covers daslr logs, got {log.method!r}")
    try:
        meta = log.meta
        shape = _CaseShape(int(meta["horizon"]), meta["directed"])
        opts = dl.DaslrOptions(M=meta["M"], p=meta["p"], gamma_min=meta["gamma_min"],
                               gamma_max=meta["gamma_max"], c0=meta["c0"], cost_scale=meta["cost_scale"],
                               e0=meta["e0"])
        K = len(shape.directed_interfaces())
        st = dl.CoordinatorState(np.zeros((shape.horizon, K)), np.zeros((shape.horizon, K)),
                                 gamma_params=(opts.M, opts.p, opts.gamma_min, opts.gamma_max),
                                 latest={m: {} for m in meta["mg_ids"]})
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptLog(f"log meta incomplete: {exc}") from None
    mismatches: list[tuple[int, str]] = []
    worst = 0.0
    prev_e = prev_norm = None
    n = 0
    for rec in log.details:
        if rec.get("kind") != "update":
            continue
        n += 1
        try:
            ex = tuple((tuple(x[:3]), x[3]) for x in rec["exchange"])
            arrival = dl.Arrival(rec["mg"], tuple(((str(k[0]), int(k[1]), k[2]), v) for k, v in ex),
                                 int(rec["lam_version"]))
            lam_p, lam_q = np.array(rec["lam_p"], float), np.array(rec["lam_q"], float)
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise CorruptLog(f"malformed update record {n}: {exc}") from None
        dl.update_multipliers(st, shape, arrival, opts)
        r = int(rec["r"])
        if st.r != r:
            mismatches.append((r, f"iteration counter {st.r} != {r}"))
        lp_ok = lam_p.shape == st.lam_p.shape and np.array_equal(lam_p, st.lam_p)
        lq_ok = lam_q.shape == st.lam_q.shape and np.array_equal(lam_q, st.lam_q)
        if not (lp_ok and lq_ok):
            mismatches.append((r, "multiplier values differ"))
            if lam_p.size != st.lam_p.size or lam_q.size != st.lam_q.size:
                raise CorruptLog(f"multiplier shape changed at r={r}")
            # continue from the logged values so later updates are checked on their own
            st.lam_p, st.lam_q = lam_p.reshape(st.lam_p.shape), lam_q.reshape(st.lam_q.shape)
        if rec["e"] != st.e and not (rec["e"] is None and st.e is None):
            mismatches.append((r, f"stepsize {rec['e']!r} != {st.e!r}"))
        # independent check of e^r |g^r| = gamma^r e^(r-1) |g^(r-1)|
        norm, e = rec["g_norm"], rec["e"]
        if norm > 0 and prev_e is not None and rec["gamma"] is not None:
            gamma = 1.0 - 1.0 / (opts.M * rec["steps"] ** (1.0 - 1.0 / rec["steps"] ** opts.p))
            gamma = min(max(gamma, opts.gamma_min), opts.gamma_max)
            lhs, rhs = e * norm, gamma * prev_e * prev_norm
            rel = abs(lhs - rhs) / max(abs(rhs), 1e-300)
            worst = max(worst, rel)
            if rel > stepsize_tol:
                mismatches.append((r, f"stepsize law off by {rel:.3e}"))
        if norm > 0:
            prev_e, prev_norm = e, norm
    return ReplayReport(n, mismatches, worst)


__all__ = ["CorruptLog", "DelayModel", "EventQueue", "LOG_COLUMNS", "METHODS", "NoFeasibleFound",
           "ReplayReport", "RunLog", "RunOptions", "RunResult", "per_mg_costs", "replay", "run"]
