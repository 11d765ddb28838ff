"""Self-contained LP/MILP kernel with a pluggable solver interface."""
from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .bnb import MilpOptions, _sub_arrays, components, solve_arrays
from .model import (MilpModel, MilpSolution, ModelArrays, ModelError, Row, Sense,
                    Status, VarKind, VarMeta)
from .simplex import BoundedSimplex, LpOptions, solve_lp_arrays

__all__ = [
    "MilpModel", "MilpSolution", "MilpOptions", "ModelArrays", "ModelError", "Row", "Sense",
    "Status", "VarKind", "VarMeta", "LpOptions", "BoundedSimplex", "Solver", "KernelSolver",
    "HighsSolver", "get_solver", "solve_lp", "solve_milp", "components",
]


def solve_lp(model: MilpModel, opts: LpOptions | None = None) -> MilpSolution:
    """Solve the continuous relaxation of ``model`` with the primal simplex."""
    model.validate()
    a = model.arrays()
    res = solve_lp_arrays(a, opts)
    obj = res.objective + a.obj_offset if res.status is Status.OPTIMAL else res.objective
    return MilpSolution(res.status, obj, res.x, obj, 0, res.iterations)


def solve_milp(model: MilpModel, opts: MilpOptions | None = None) -> MilpSolution:
    model.validate()
    return solve_arrays(model.arrays(), opts)


class Solver(Protocol):
    name: str

    def solve(self, model: MilpModel, opts: MilpOptions | None = None) -> MilpSolution: ...

    def solve_arrays(self, arrays: ModelArrays, opts: MilpOptions | None = None) -> MilpSolution: ...


class KernelSolver:
    name = "kernel"

    def solve(self, model: MilpModel, opts: MilpOptions | None = None) -> MilpSolution:
        return solve_milp(model, opts)

    def solve_arrays(self, arrays: ModelArrays, opts: MilpOptions | None = None) -> MilpSolution:
        return solve_arrays(arrays, opts)


class HighsSolver:
    """Adapter for the HiGHS engine bundled with SciPy (external, optional)."""

    name = "highs"

    def solve(self, model: MilpModel, opts: MilpOptions | None = None) -> MilpSolution:
        model.validate()
        return self.solve_arrays(model.arrays(), opts)

    def solve_arrays(self, a: ModelArrays, opts: MilpOptions | None = None) -> MilpSolution:
        opts = opts or MilpOptions()
        if not opts.decompose:
            return self._solve_block(a, opts)
        n = a.c.size
        values = np.zeros(n)
        total = bound = a.obj_offset
        nodes = 0
        status = Status.OPTIMAL
        for cols, rows in components(a):
            sol = self._solve_block(_sub_arrays(a, cols, rows), opts)
            if sol.status in (Status.INFEASIBLE, Status.UNBOUNDED):
                return MilpSolution(sol.status, math.nan if sol.status is Status.INFEASIBLE else -math.inf,
                                    np.zeros(n), -math.inf, nodes, 0)
            if sol.status is Status.ITER_LIMIT:
                status = Status.ITER_LIMIT
            values[cols] = sol.values
            total += sol.objective
            bound += sol.bound
            nodes += sol.node_count
        return MilpSolution(status, total, values, bound, nodes, 0)

    @staticmethod
    def _solve_block(a: ModelArrays, opts: MilpOptions) -> MilpSolution:
        from scipy.optimize import Bounds, LinearConstraint, milp

        n = a.c.size
        cons = [LinearConstraint(a.A, a.row_lo, a.row_hi)] if a.A.shape[0] else []
        options = {"mip_rel_gap": opts.gap_tol, "presolve": True}
        if opts.time_limit is not None:
            options["time_limit"] = opts.time_limit
        res = milp(a.c, constraints=cons, integrality=a.integer.astype(int),
                   bounds=Bounds(a.lb, a.ub), options=options)
        if res.status == 0:
            bound = getattr(res, "mip_dual_bound", None)
            if bound is None or not math.isfinite(bound):
                bound = res.fun
            return MilpSolution(Status.OPTIMAL, res.fun + a.obj_offset, np.asarray(res.x),
                                min(bound, res.fun) + a.obj_offset, int(getattr(res, "mip_node_count", 0) or 0), 0)
        if res.status == 2:
            return MilpSolution(Status.INFEASIBLE, math.nan, np.zeros(n))
        if res.status == 3:
            return MilpSolution(Status.UNBOUNDED, -math.inf, np.zeros(n))
        x = np.asarray(res.x) if res.x is not None else np.zeros(n)
        return MilpSolution(Status.ITER_LIMIT, math.nan if res.x is None else res.fun + a.obj_offset, x)


_SOLVERS = {"kernel": KernelSolver, "highs": HighsSolver}


def get_solver(name: str | Solver = "kernel") -> Solver:
    if not isinstance(name, str):
        return name
    try:
        return _SOLVERS[name]()
    except KeyError:
        raise ValueError(f"unknown solver {name!r}; choose from {sorted(_SOLVERS)}") from None
