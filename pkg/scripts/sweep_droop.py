"""Centralized cost at droop contribution 20% and 30% on every bundled case.

Uses HiGHS; case33 and case123 are cut to 6 periods and 5 and 3 droop levels.
"""
from gridmesh.builder import build_centralized
from gridmesh.case import BUNDLED, coarsen_droop, load_case, with_contribution_frac, with_horizon
from gridmesh.milp import MilpOptions, get_solver


def main():
    solver = get_solver("highs")
    for name in BUNDLED:
        base = load_case(name)
        if name != "case_mini2":
            base = with_horizon(base, 6)
            base = coarsen_droop(base, 5 if name == "case33_4mg" else 3)
        costs = [solver.solve(build_centralized(with_contribution_frac(base, f)).model,
                              MilpOptions(gap_tol=1e-7)).objective for f in (0.2, 0.3)]
        print(f"{name:12s} 20%: {costs[0]:10.3f}  30%: {costs[1]:10.3f}  "
              f"reduction {(costs[0] - costs[1]) / costs[0]:.2%}")


if __name__ == "__main__":
    main()
