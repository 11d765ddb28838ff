"""Command-line entry points: ``gridmesh solve | compare | sweep-droop | replay | presets``.

Exit status: 0 on success, 2 when no feasible schedule was restored, 1 on
input errors (bad flags, unreadable or invalid case files).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import daslr as dl
from .admm import AdmmOptions
from .case import (BUNDLED, CaseError, NetworkCase, coarsen_droop, load_case, with_contribution_frac,
                   with_horizon)
from .harness import (CorruptLog, DelayModel, NoFeasibleFound, RunLog, RunOptions, RunResult, replay, run)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    case: str
    methods: tuple[str, ...] = ("daslr",)
    horizon: int | None = None
    droop_levels: int | None = None
    max_iters: int = 40
    gap_tol: float = 0.002
    fractions: tuple[float, ...] = (0.2, 0.3)
    note: str = ""

    def __post_init__(self):
        if self.case not in BUNDLED:
            raise ValueError(f"preset {self.name}: {self.case} is not a bundled case")
        if not self.methods or not self.fractions:
            raise ValueError(f"preset {self.name}: scenario lists must be nonempty")

    def load(self) -> NetworkCase:
        case = load_case(self.case)
        if self.horizon is not None:
            case = with_horizon(case, self.horizon)
        if self.droop_levels is not None:
            case = coarsen_droop(case, self.droop_levels)
        return case


PRESETS = {p.name: p for p in [
    ExperimentPreset("mini2", "case_mini2", ("daslr", "admm"), note="two-microgrid oracle case"),
    ExperimentPreset("case33-reduced", "case33_4mg", ("daslr", "admm"), horizon=6, droop_levels=5,
                     note="4 microgrids, 6 periods, 5 droop levels"),
    ExperimentPreset("case33-full", "case33_4mg", ("daslr", "admm"), max_iters=60,
                     note="4 microgrids, 24 periods, full droop grids (slow)"),
    ExperimentPreset("case123-reduced", "case123_9mg", ("daslr", "admm"), horizon=4, droop_levels=3,
                     note="9 synthetic microgrids, 4 periods, 3 droop levels"),
    ExperimentPreset("droop-sweep", "case33_4mg", ("centralized",), horizon=6, droop_levels=5,
                     fractions=(0.2, 0.3), note="droop contribution 20% -> 30%"),
]}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # input errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def resolve_case(ref: str, horizon: int | None = None, droop_levels: int | None = None,
                 contribution_frac: float | None = None) -> NetworkCase:
    """``ref`` is a preset name, a bundled case name, or a path to a case file."""
    if ref in PRESETS:
        case = PRESETS[ref].load()
    else:
        case = load_case(ref)
    if horizon is not None:
        case = with_horizon(case, horizon)
    if droop_levels is not None:
        case = coarsen_droop(case, droop_levels)
    if contribution_frac is not None:
        case = with_contribution_frac(case, contribution_frac)
    return case


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", required=True, help="preset, bundled case name, or case file path")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--gap-tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--delay-model", default="fixed:1", help="fixed:S | uniform:LO:HI | table:MG1=1,*=5")
    p.add_argument("--broadcast-latency", type=float, default=0.0)
    p.add_argument("--contribution-frac", type=float, default=None)
    p.add_argument("--horizon", type=int, default=None, help="keep only the first N periods")
    p.add_argument("--droop-levels", type=int, default=None, help="coarsen droop grids to N levels")
    p.add_argument("--solver", choices=("kernel", "highs"), default="kernel")
    p.add_argument("--restore-solver", choices=("kernel", "highs"), default=None)
    p.add_argument("--restore-directions", action="store_true",
                   help="also restore with only flow directions fixed (best with --restore-solver highs)")
    p.add_argument("--c0", type=float, default=None, help="initial stepsize factor")
    p.add_argument("--rho", type=float, default=None, help="ADMM penalty (normalised)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gridmesh", description="Networked-microgrid scheduling by asynchronous coordination.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", help="run one method and write schedule, runlog and summary")
    _common(s)
    s.add_argument("--method", choices=("daslr", "admm", "centralized"), default="daslr")
    c = sub.add_parser("compare", help="DA-SLR vs ADMM on the same case and budget")
    _common(c)
    w = sub.add_parser("sweep-droop", help="cost versus droop contribution fraction")
    _common(w)
    w.add_argument("--fractions", default=None, help="comma-separated, e.g. 0.2,0.3")
    w.add_argument("--method", choices=("daslr", "admm", "centralized"), default="centralized")
    r = sub.add_parser("replay", help="re-derive multiplier updates from a daslr runlog")
    r.add_argument("runlog", help="runlog.csv (runlog.jsonl must sit next to it)")
    sub.add_parser("presets", help="list experiment presets")
    return ap


def _options(args, method: str) -> RunOptions:
    preset = PRESETS.get(args.case)
    max_iters = args.max_iters if args.max_iters is not None else (preset.max_iters if preset else 40)
    gap_tol = args.gap_tol if args.gap_tol is not None else (preset.gap_tol if preset else 0.002)
    delay = replace(DelayModel.parse(args.delay_model), broadcast_latency=args.broadcast_latency)
    dopt = dl.DaslrOptions(restore_directions=args.restore_directions)
    if args.c0 is not None:
        dopt = replace(dopt, c0=args.c0)
    aopt = AdmmOptions() if args.rho is None else AdmmOptions(rho=args.rho)
    return RunOptions(method=method, max_iters=max_iters, gap_tol=gap_tol, seed=args.seed, delay=delay,
                      daslr=dopt, admm=aopt, solver=args.solver, restore_solver=args.restore_solver)


def _case(args, frac=None) -> NetworkCase:
    return resolve_case(args.case, args.horizon, args.droop_levels,
                        frac if frac is not None else args.contribution_frac)


def _json_float(x: float):
    return x if math.isfinite(x) else None


def write_schedule(path: Path, result: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mg", "symbol", "entity", "value"])
        for t, mg, sym, ent, v in result.schedule.rows():
            w.writerow([t, mg, sym, ent, repr(float(v))])


TRACE_COLUMNS = ("r", "sim_time", "feasible_cost", "dual_bound", "gap")


def write_trace(path: Path, log: RunLog) -> int:
    """One row per feasibility search (iteration vs feasible cost), for plotting."""
    rows = log.events("search") or log.events("solve")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r["r"], repr(r["sim_time"]), repr(r["feasible_cost"]), repr(r["dual_bound"]),
                        repr(r["gap"])])
    return len(rows)


def write_summary(path: Path, result: RunResult, extra: dict | None = None) -> dict:
    s = result.summary()
    s = {**s, "feasible_cost": _json_float(s["feasible_cost"]), "dual_bound": _json_float(s["dual_bound"]),
         "gap": _json_float(s["gap"]), **(extra or {})}
    path.write_text(json.dumps(s, indent=2, sort_keys=True) + "\n")
    return s


def cmd_solve(args) -> int:
    case = _case(args)
    opts = _options(args, args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = run(case, args.method, opts)
    except NoFeasibleFound as exc:
        if exc.log is not None:
            exc.log.write(out)
        print(f"no feasible schedule: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    write_schedule(out / "schedule.csv", res)
    res.log.write(out)
    write_trace(out / "trace.csv", res.log)
    s = write_summary(out / "summary.json", res)
    print(f"{s['method']} on {s['case']}: cost {res.feasible_cost:.6g}, dual bound {res.dual_bound:.6g}, "
          f"gap {res.gap:.4%}, {s['iterations']} iterations -> {out}")
    return EXIT_OK


ADMM_NOTE = ("ADMM baseline: consensus ADMM on the exchange coupling constraints, quadratic penalty "
             "replaced by its secant interpolant so subproblems stay MILPs; no residual balancing.")


def comparison_table(case: NetworkCase, results: dict[str, RunResult | None]) -> list[list]:
    header = ["method", *case.mg_ids, "total", "iterations", "gap"]
    rows = [header]
    for method, res in results.items():
        if res is None:
            rows.append([method, *["" for _ in case.mg_ids], "", "", "no feasible point"])
            continue
        costs = [res.per_mg_costs[m] for m in case.mg_ids]
        rows.append([method, *costs, sum(costs), res.iterations, res.gap])
    return rows


def _aligned(rows: list[list]) -> str:
    cells = [[f"{c:.2f}" if isinstance(c, float) and i < len(r) - 1 else
              (f"{c:.4%}" if isinstance(c, float) else str(c)) for i, c in enumerate(r)] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"


def cmd_compare(args) -> int:
    case = _case(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, RunResult | None] = {}
    notes = [ADMM_NOTE]
    for method in ("daslr", "admm"):
        try:
            res = run(case, method, _options(args, method))
        except NoFeasibleFound as exc:
            results[method] = None
            notes.append(f"{method}: {exc}")
            if exc.log is not None:
                exc.log.write(out, f"runlog_{method}")
            continue
        results[method] = res
        res.log.write(out, f"runlog_{method}")
        write_trace(out / f"trace_{method}.csv", res.log)
        write_summary(out / f"summary_{method}.json", res)
        if method == "admm" and res.log.meta.get("diverged"):
            notes.append("admm: primal residual stayed above the ceiling; divergence reported")
    rows = comparison_table(case, results)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow([repr(c) if isinstance(c, float) else c for c in r])
    text = f"Feasible cost by microgrid, {case.name}\n" + _aligned(rows) + "\n" + "\n".join(notes) + "\n"
    (out / "compare.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if results.get("daslr") is not None else EXIT_INFEASIBLE


def sweep_rows(case_fn, fractions, method: str, opts_fn) -> list[dict]:
    rows = []
    base = None
    for f in fractions:
        case = case_fn(f)
        res = run(case, method, opts_fn(method))
        total = res.feasible_cost
        base = total if base is None else base
        red = 0.0 if total == base else (base - total) / abs(base)
        rows.append({"contribution_frac": f, **{m: res.per_mg_costs[m] for m in case.mg_ids},
                     "total": total, "reduction": red})
    return rows


def cmd_sweep_droop(args) -> int:
    preset = PRESETS.get(args.case)
    if args.fractions:
        fractions = tuple(float(x) for x in args.fractions.split(","))
    else:
        fractions = preset.fractions if preset else (0.2, 0.3)
    if not fractions:
        raise ValueError("--fractions must list at least one value")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = sweep_rows(lambda f: _case(args, f), fractions, args.method, lambda m: _options(args, m))
    except NoFeasibleFound as exc:
        print(f"no feasible schedule: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    cols = list(rows[0])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    for r in rows:
        print(f"frac {r['contribution_frac']:.2f}: total {r['total']:.6g}, reduction {r['reduction']:.2%}")
    return EXIT_OK


def cmd_replay(args) -> int:
    rep = replay(args.runlog)
    print(rep)
    return EXIT_OK if rep.ok else EXIT_INPUT


def cmd_presets(args) -> int:
    for p in PRESETS.values():
        print(f"{p.name:16s} {p.case:12s} methods={','.join(p.methods)} T={p.horizon or 'full'} "
              f"levels={p.droop_levels or 'full'} iters={p.max_iters}  {p.note}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "compare": cmd_compare, "sweep-droop": cmd_sweep_droop,
            "replay": cmd_replay, "presets": cmd_presets}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors (1) and --help (0)
        return int(exc.code or 0)
    try:
        return COMMANDS[args.cmd](args)
    except (CaseError, CorruptLog, ValueError, OSError) as exc:
        print(f"gridmesh {args.cmd}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
