"""Grid over the stepsize parameters (c0, M) on the reduced case33 scenario.

Subproblems use HiGHS so a configuration takes a few minutes on one core.
Usage: python3 scripts/stepsize_sweep.py 0.05,0.1 10,20
"""
import itertools
import sys
import time

from gridmesh.case import coarsen_droop, load_case, with_horizon
from gridmesh.daslr import DaslrOptions
from gridmesh.harness import RunOptions, run


def floats(text):
    return [float(x) for x in text.split(",")]


def main(c0s, Ms):
    case = coarsen_droop(with_horizon(load_case("case33_4mg"), 6), 5)
    for c0, M in itertools.product(c0s, Ms):
        t0 = time.perf_counter()
        res = run(case, "daslr", RunOptions(max_iters=40, gap_tol=0.0, solver="highs",
                                            daslr=DaslrOptions(c0=c0, M=M)))
        trace = [round(r["gap"], 3) for r in res.log.events("search")]
        print(f"c0={c0} M={M} feasible {res.feasible_cost:.2f} dual {res.dual_bound:.2f} gap {res.gap:.4f} "
              f"trace {trace} {time.perf_counter() - t0:.0f} s", flush=True)


if __name__ == "__main__":
    main(floats(sys.argv[1]) if len(sys.argv) > 1 else [0.05, 0.1],
         floats(sys.argv[2]) if len(sys.argv) > 2 else [20.0])
