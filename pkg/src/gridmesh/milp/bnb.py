"""LP-based branch-and-bound on top of :mod:`gridmesh.milp.simplex`.

Branching: most-fractional variable, ties to the lowest index.  Node
selection: best bound, ties to creation order.  Children warm start from the
parent's final basis.  Independent blocks of the constraint graph are solved
separately (see :func:`components`), which keeps per-period separable
scheduling models from multiplying their search trees.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .model import MilpSolution, ModelArrays, Status
from .simplex import BoundedSimplex, LpOptions


@dataclass
class MilpOptions:
    gap_tol: float = 1e-6
    node_limit: int = 200_000
    time_limit: float | None = None
    feas_tol: float = 1e-7
    int_tol: float = 1e-6
    iter_limit: int = 50_000
    decompose: bool = True
    dive: bool = True  # depth-first rounding dive at the root for an early incumbent
    trace: list | None = field(default=None, repr=False)  # receives (nodes, bound, incumbent)

    def lp_options(self) -> LpOptions:
        return LpOptions(feas_tol=self.feas_tol, iter_limit=self.iter_limit)


def components(arrays: ModelArrays) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split variables/rows into independent blocks.

    Returns ``(var_idx, row_idx)`` pairs ordered by smallest variable index.
    """
    m, n = arrays.A.shape
    if m == 0:
        return [(np.array([j]), np.array([], dtype=int)) for j in range(n)]
    coo = arrays.A.tocoo()
    # bipartite graph: nodes 0..n-1 variables, n..n+m-1 rows
    g = sp.coo_matrix((np.ones(coo.nnz), (coo.col, n + coo.row)), shape=(n + m, n + m))
    _, labels = connected_components(g, directed=False)
    var_lab, row_lab = labels[:n], labels[n:]
    order: dict[int, int] = {}
    for j, lab in enumerate(var_lab):
        order.setdefault(int(lab), j)
    blocks = []
    for lab, _ in sorted(order.items(), key=lambda kv: kv[1]):
        blocks.append((np.flatnonzero(var_lab == lab), np.flatnonzero(row_lab == lab)))
    return blocks


def _sub_arrays(a: ModelArrays, cols: np.ndarray, rows: np.ndarray) -> ModelArrays:
    A = a.A[rows][:, cols] if rows.size else sp.csc_matrix((0, cols.size))
    return ModelArrays(a.c[cols], a.lb[cols], a.ub[cols], sp.csc_matrix(A),
                       a.row_lo[rows], a.row_hi[rows], a.integer[cols], 0.0)


def drop_fixed(arrays: ModelArrays, tol: float = 1e-7):
    """Substitute fixed columns (lb == ub) into the row bounds.

    Returns ``(reduced, free_cols, fixed_values)`` or ``None`` if a row left
    without free columns is violated by the fixings.
    """
    fixed = arrays.lb == arrays.ub
    free = np.flatnonzero(~fixed)
    xf = np.where(fixed, arrays.lb, 0.0)
    shift = arrays.A @ xf
    lo, hi = arrays.row_lo - shift, arrays.row_hi - shift
    A = arrays.A[:, free]
    live = np.diff(A.tocsr().indptr) > 0
    dead = ~live
    if np.any(lo[dead] > tol) or np.any(hi[dead] < -tol):
        return None
    rows = np.flatnonzero(live)
    reduced = ModelArrays(arrays.c[free], arrays.lb[free], arrays.ub[free], sp.csc_matrix(A[rows]),
                          lo[rows], hi[rows], arrays.integer[free],
                          arrays.obj_offset + float(arrays.c @ xf))
    return reduced, free, xf


def solve_arrays(arrays: ModelArrays, opts: MilpOptions | None = None) -> MilpSolution:
    opts = opts or MilpOptions()
    n = arrays.c.size
    if np.any(arrays.lb == arrays.ub):
        red = drop_fixed(arrays, opts.feas_tol)
        if red is None:
            return MilpSolution(Status.INFEASIBLE, math.nan, np.zeros(n), -math.inf, 0, 0)
        reduced, free, xf = red
        if reduced.c.size < n:
            sol = solve_arrays(reduced, opts)
            values = xf.copy()
            values[free] = sol.values
            return MilpSolution(sol.status, sol.objective, values, sol.bound, sol.node_count, sol.simplex_iters)
    if not opts.decompose:
        sol = _branch_and_bound(arrays, opts)
        sol.objective += arrays.obj_offset
        sol.bound += arrays.obj_offset
        return sol
    values = np.zeros(n)
    total, bound = arrays.obj_offset, arrays.obj_offset
    nodes = iters = 0
    status = Status.OPTIMAL
    for cols, rows in components(arrays):
        sol = _branch_and_bound(_sub_arrays(arrays, cols, rows), opts)
        nodes += sol.node_count
        iters += sol.simplex_iters
        if sol.status in (Status.INFEASIBLE, Status.UNBOUNDED):
            return MilpSolution(sol.status, math.nan, np.zeros(n), -math.inf, nodes, iters)
        if sol.status is Status.ITER_LIMIT:
            status = Status.ITER_LIMIT
        values[cols] = sol.values
        total += sol.objective
        bound += sol.bound
    return MilpSolution(status, total, values, bound, nodes, iters)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    x: np.ndarray = field(compare=False)
    basis: object = field(compare=False)


def _most_fractional(x, integer, int_tol) -> int:
    idx = np.flatnonzero(integer)
    if idx.size == 0:
        return -1
    frac = np.abs(x[idx] - np.round(x[idx]))
    k = int(np.argmax(frac))  # argmax returns the first maximum: lowest index wins
    return int(idx[k]) if frac[k] > int_tol else -1


def _branch_and_bound(a: ModelArrays, opts: MilpOptions) -> MilpSolution:
    n = a.c.size
    lp = BoundedSimplex(a.A, a.c, a.row_lo, a.row_hi, opts.lp_options())
    integer = a.integer
    lb0, ub0 = a.lb.copy(), a.ub.copy()
    # integral bounds on integer columns
    lb0[integer] = np.ceil(lb0[integer] - opts.int_tol)
    ub0[integer] = np.floor(ub0[integer] + opts.int_tol)
    iters = 0
    root = lp.solve(lb0, ub0)
    iters += root.iterations
    if root.status is not Status.OPTIMAL:
        return MilpSolution(root.status, math.nan, np.zeros(n), -math.inf, 1, iters)
    if not integer.any() or _most_fractional(root.x, integer, opts.int_tol) < 0:
        return MilpSolution(Status.OPTIMAL, root.objective, root.x, root.objective, 1, iters)

    start = time.perf_counter()
    incumbent = math.inf
    best_x = None
    nodes = 1
    seq = 0
    heap: list[_Node] = [_Node(root.objective, seq, lb0, ub0, root.x, root.basis)]

    def gap_closed(bound: float) -> bool:
        if not math.isfinite(incumbent):
            return False
        return incumbent - bound <= opts.gap_tol * max(abs(incumbent), 1.0)

    if opts.dive:
        lb, ub, x, basis = lb0.copy(), ub0.copy(), root.x, root.basis
        for _ in range(int(integer.sum()) + 1):
            j = _most_fractional(x, integer, opts.int_tol)
            if j < 0:
                obj = float(a.c @ x)
                if obj < incumbent:
                    incumbent, best_x = obj, x.copy()
                break
            v = math.floor(x[j] + 0.5)
            lb[j] = ub[j] = v
            res = lp.solve(lb, ub, basis)
            iters += res.iterations
            nodes += 1
            if res.status is not Status.OPTIMAL:
                break
            x, basis = res.x, res.basis

    status = Status.OPTIMAL
    pruned_min = math.inf  # LP values of subtrees discarded by the gap test
    while heap:
        if nodes >= opts.node_limit or (
                opts.time_limit is not None and time.perf_counter() - start > opts.time_limit):
            status = Status.ITER_LIMIT
            break
        node = heapq.heappop(heap)
        if gap_closed(node.bound):
            pruned_min = min(pruned_min, node.bound)
            heap.clear()
            break
        j = _most_fractional(node.x, integer, opts.int_tol)
        if j < 0:  # integral nodes are consumed when created; keep for safety
            continue
        v = node.x[j]
        for side in (0, 1):
            lb, ub = node.lb.copy(), node.ub.copy()
            if side == 0:
                ub[j] = math.floor(v)
            else:
                lb[j] = math.ceil(v)
            res = lp.solve(lb, ub, node.basis)
            iters += res.iterations
            nodes += 1
            if res.status is Status.ITER_LIMIT:
                status = Status.ITER_LIMIT
                pruned_min = min(pruned_min, node.bound)
                continue
            if res.status is not Status.OPTIMAL:
                continue
            if gap_closed(res.objective):
                pruned_min = min(pruned_min, res.objective)
                continue
            if _most_fractional(res.x, integer, opts.int_tol) < 0:
                incumbent, best_x = res.objective, res.x.copy()
                continue
            seq += 1
            heapq.heappush(heap, _Node(res.objective, seq, lb, ub, res.x, res.basis))
        if opts.trace is not None:
            bnd = min(incumbent, pruned_min, heap[0].bound if heap else math.inf)
            opts.trace.append((nodes, bnd, incumbent))

    if best_x is None:
        st = Status.ITER_LIMIT if status is Status.ITER_LIMIT else Status.INFEASIBLE
        return MilpSolution(st, math.nan, np.zeros(n), -math.inf, nodes, iters)
    bound = min(incumbent, pruned_min, heap[0].bound if heap else math.inf)
    return MilpSolution(status, incumbent, best_x, bound, nodes, iters)
