"""Bounded-variable revised primal simplex.

Every row ``i`` gets a logical variable ``r_i`` with ``A x - r = 0`` and the
row's bounds moved onto ``r_i`` (``<=`` rows: ``(-inf, b]``, ``>=``: ``[b, inf)``,
``=``: ``[b, b]``).  The all-logical basis is therefore always available, and a
composite phase one (minimize the sum of bound infeasibilities of the basic
variables) starts from any basis, which is what branch-and-bound uses to warm
start children from their parent's final basis.  Equality logicals are the
artificial variables of the classical two-phase method: phase one drives them
onto their fixed value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg.blas import dger

from .model import Status

AT_LOWER, AT_UPPER, AT_ZERO, BASIC = 0, 1, 2, 3


@dataclass
class LpOptions:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-9
    pivot_tol: float = 1e-7
    iter_limit: int = 50_000
    refactor_every: int = 64
    bland_after: int = 40  # consecutive degenerate pivots before Bland's rule
    keep_inverse_max_rows: int = 400  # warm starts carry B^-1 up to this size


@dataclass
class Basis:
    basic: np.ndarray   # length m, column indices into [A | -I]
    status: np.ndarray  # length n + m
    inverse: np.ndarray | None = None  # B^-1 at the time of return, reused by warm starts

    def copy(self) -> "Basis":
        inv = None if self.inverse is None else self.inverse.copy()
        return Basis(self.basic.copy(), self.status.copy(), inv)


@dataclass
class LpResult:
    status: Status
    x: np.ndarray
    objective: float
    iterations: int
    basis: Basis | None = None


class BoundedSimplex:
    """Solve ``min c.x`` s.t. ``row_lo <= A x <= row_hi``, ``lb <= x <= ub``."""

    def __init__(self, A: sp.spmatrix, c, row_lo, row_hi, opts: LpOptions | None = None):
        self.opts = opts or LpOptions()
        self.A = sp.csc_matrix(A, dtype=float)
        self.AT = self.A.T.tocsr()
        self.m, self.n = self.A.shape
        self.c = np.concatenate([np.asarray(c, dtype=float), np.zeros(self.m)])
        self.row_lo = np.asarray(row_lo, dtype=float)
        self.row_hi = np.asarray(row_hi, dtype=float)
        self._indptr = self.A.indptr
        self._indices = self.A.indices
        self._data = self.A.data

    # column access ---------------------------------------------------------
    def _column_dense(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        if j < self.n:
            s, e = self._indptr[j], self._indptr[j + 1]
            col[self._indices[s:e]] = self._data[s:e]
        else:
            col[j - self.n] = -1.0
        return col

    def _ftran(self, Binv: np.ndarray, j: int) -> np.ndarray:
        if j < self.n:
            s, e = self._indptr[j], self._indptr[j + 1]
            return Binv[:, self._indices[s:e]] @ self._data[s:e]
        return -Binv[:, j - self.n]

    def _basis_matrix(self, basic: np.ndarray) -> np.ndarray:
        B = np.empty((self.m, self.m))
        for p, j in enumerate(basic):
            B[:, p] = self._column_dense(int(j))
        return B

    def _factor(self, basic: np.ndarray) -> np.ndarray:
        B = self._basis_matrix(basic)
        Binv = np.ascontiguousarray(np.linalg.inv(B))
        cond = np.abs(B).sum(axis=0).max() * np.abs(Binv).sum(axis=0).max()
        if not np.isfinite(cond) or cond > 1e13:
            raise np.linalg.LinAlgError("ill-conditioned basis")
        return Binv

    def _repair(self, basic, status, x, lo, up) -> np.ndarray:
        """Swap dependent basic columns for row logicals; returns the new inverse."""
        B = self._basis_matrix(basic)
        _, R, piv = scipy.linalg.qr(B, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-9 * max(diag[0], 1.0))) if diag.size else 0
        keep = np.sort(piv[:rank])
        _, _, rpiv = scipy.linalg.qr(B[:, keep].T, pivoting=True, mode="economic")
        free_rows = np.setdiff1d(np.arange(self.m), rpiv[:rank])
        dropped = np.setdiff1d(np.arange(self.m), keep)
        for p in dropped:
            j = int(basic[p])
            x[j], status[j] = _nonbasic_position(AT_LOWER, lo[j], up[j])
        new_basic = np.concatenate([basic[keep], self.n + free_rows])
        # a logical may already be basic among the kept columns only if its row is pivoted
        status[new_basic] = BASIC
        basic[:] = new_basic
        return np.ascontiguousarray(np.linalg.inv(self._basis_matrix(basic)))

    def _refactor(self, basic, status, x, lo, up) -> np.ndarray:
        try:
            return self._factor(basic)
        except np.linalg.LinAlgError:
            return self._repair(basic, status, x, lo, up)

    def _basic_values(self, Binv, basic, x) -> np.ndarray:
        xn = x.copy()
        xn[basic] = 0.0
        rhs = self.A @ xn[: self.n] - xn[self.n:]
        return -(Binv @ rhs)

    # main entry ------------------------------------------------------------
    def solve(self, lb, ub, basis: Basis | None = None) -> LpResult:
        o = self.opts
        n, m = self.n, self.m
        lo = np.concatenate([np.asarray(lb, dtype=float), self.row_lo])
        up = np.concatenate([np.asarray(ub, dtype=float), self.row_hi])
        if np.any(lo > up + o.feas_tol):
            return LpResult(Status.INFEASIBLE, np.zeros(n), math.nan, 0)
        if m == 0:
            return self._solve_unconstrained(lo, up)

        if basis is None:
            basic = np.arange(n, n + m)
            status = np.empty(n + m, dtype=np.int8)
            status[n:] = BASIC
            status[:n] = AT_LOWER
        else:
            basic = basis.basic.copy()
            status = basis.status.copy()
        x = np.zeros(n + m)
        nb = status != BASIC
        # place nonbasics on a finite bound, honouring the requested side
        for j in np.flatnonzero(nb):
            x[j], status[j] = _nonbasic_position(status[j], lo[j], up[j])

        if basis is not None and basis.inverse is not None and basis.inverse.shape == (m, m):
            Binv = basis.inverse.copy()
        else:
            Binv = self._refactor(basic, status, x, lo, up)
        x[basic] = self._basic_values(Binv, basic, x)

        iters = 0
        since_refactor = 0
        degenerate_streak = 0
        while True:
            if iters >= o.iter_limit:
                return LpResult(Status.ITER_LIMIT, x[:n].copy(), math.nan, iters, Basis(basic, status))
            xb = x[basic]
            lob, upb = lo[basic], up[basic]
            below = xb < lob - o.feas_tol
            above = xb > upb + o.feas_tol
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = above.astype(float) - below.astype(float)
            else:
                cb = self.c[basic]
            y = cb @ Binv
            d_struct = (self.c[:n] if not phase1 else 0.0) - self.AT @ y
            d = np.concatenate([d_struct, y])
            d[basic] = 0.0

            movable = (status != BASIC) & (up > lo)
            inc = movable & (((status == AT_LOWER) | (status == AT_ZERO)) & (d < -o.opt_tol))
            dec = movable & (((status == AT_UPPER) | (status == AT_ZERO)) & (d > o.opt_tol))
            eligible = inc | dec
            if not eligible.any():
                if since_refactor and not self._consistent(x):
                    # confirm on a fresh factorization before concluding
                    Binv = self._refactor(basic, status, x, lo, up)
                    x[basic] = self._basic_values(Binv, basic, x)
                    since_refactor = 0
                    continue
                if phase1:
                    return LpResult(Status.INFEASIBLE, x[:n].copy(), math.nan, iters, Basis(basic, status))
                obj = float(self.c[:n] @ x[:n])
                return LpResult(Status.OPTIMAL, x[:n].copy(), obj, iters, self._keep(basic, status, Binv))

            bland = degenerate_streak >= o.bland_after
            if bland:
                q = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, np.abs(d), -1.0)
                q = int(np.argmax(score))
            direction = 1.0 if inc[q] else -1.0

            alpha = self._ftran(Binv, q)
            delta = -direction * alpha  # rate of change of x_B per unit step
            step = up[q] - lo[q]
            leave = -1
            leave_to_upper = False
            big = np.abs(delta) > o.pivot_tol
            if big.any():
                pos = np.flatnonzero(big)
                dl = delta[pos]
                xv, lv, uv = xb[pos], lob[pos], upb[pos]
                ratios = np.full(pos.size, np.inf)
                to_upper = np.zeros(pos.size, dtype=bool)
                if phase1:
                    bel, abv = below[pos], above[pos]
                else:
                    bel = abv = np.zeros(pos.size, dtype=bool)
                feas = ~(bel | abv)
                # feasible basics block at whichever bound they move toward
                up_mask = feas & (dl > 0) & np.isfinite(uv)
                ratios[up_mask] = (uv[up_mask] - xv[up_mask]) / dl[up_mask]
                to_upper[up_mask] = True
                lo_mask = feas & (dl < 0) & np.isfinite(lv)
                ratios[lo_mask] = (lv[lo_mask] - xv[lo_mask]) / dl[lo_mask]
                # infeasible basics block where they regain feasibility
                b_mask = bel & (dl > 0)
                ratios[b_mask] = (lv[b_mask] - xv[b_mask]) / dl[b_mask]
                a_mask = abv & (dl < 0)
                ratios[a_mask] = (uv[a_mask] - xv[a_mask]) / dl[a_mask]
                to_upper[a_mask] = True
                ratios = np.maximum(ratios, 0.0)
                rmin = ratios.min()
                if rmin < step:
                    ties = np.flatnonzero(ratios <= rmin + 1e-12)
                    if bland:
                        k = ties[np.argmin(basic[pos[ties]])]
                    else:
                        k = ties[np.argmax(np.abs(dl[ties]))]
                    leave = int(pos[k])
                    leave_to_upper = bool(to_upper[k])
                    step = float(ratios[k])
            if not math.isfinite(step):
                if phase1 and since_refactor:
                    # cannot happen for a consistent basis; refactor and retry
                    Binv = self._refactor(basic, status, x, lo, up)
                    x[basic] = self._basic_values(Binv, basic, x)
                    since_refactor = 0
                    iters += 1
                    continue
                return LpResult(Status.UNBOUNDED, x[:n].copy(), -math.inf, iters, Basis(basic, status))

            degenerate_streak = degenerate_streak + 1 if step <= 1e-12 else 0
            x[q] += direction * step
            x[basic] += delta * step
            iters += 1
            if leave < 0:
                status[q] = AT_UPPER if direction > 0 else AT_LOWER
                x[q] = up[q] if direction > 0 else lo[q]
                continue
            out = int(basic[leave])
            x[out] = up[out] if leave_to_upper else lo[out]
            status[out] = AT_UPPER if leave_to_upper else AT_LOWER
            if not math.isfinite(x[out]):
                x[out] = 0.0
                status[out] = AT_ZERO
            basic[leave] = q
            status[q] = BASIC
            since_refactor += 1
            if since_refactor >= o.refactor_every:
                Binv = self._refactor(basic, status, x, lo, up)
                x[basic] = self._basic_values(Binv, basic, x)
                since_refactor = 0
            else:
                piv = alpha[leave]
                row = Binv[leave] / piv
                # Binv -= outer(alpha, row), in place through the transposed (Fortran) view
                dger(-1.0, row, alpha, a=Binv.T, overwrite_a=1)
                Binv[leave] = row

    def _consistent(self, x) -> bool:
        """Do the incrementally updated values still satisfy ``A x - r = 0``?"""
        res = self.A @ x[: self.n] - x[self.n:]
        scale = 1.0 + float(np.abs(x).max(initial=0.0))
        return float(np.abs(res).max(initial=0.0)) <= 1e-10 * scale

    def _keep(self, basic, status, Binv) -> Basis:
        return Basis(basic, status, Binv if self.m <= self.opts.keep_inverse_max_rows else None)

    def _solve_unconstrained(self, lo, up) -> LpResult:
        n = self.n
        c = self.c[:n]
        x = np.zeros(n)
        for j in range(n):
            if c[j] > 0:
                x[j] = lo[j]
            elif c[j] < 0:
                x[j] = up[j]
            else:
                x[j] = lo[j] if math.isfinite(lo[j]) else (up[j] if math.isfinite(up[j]) else 0.0)
            if not math.isfinite(x[j]):
                return LpResult(Status.UNBOUNDED, x, -math.inf, 0)
        return LpResult(Status.OPTIMAL, x, float(c @ x), 0)


def _nonbasic_position(requested: int, lo: float, up: float) -> tuple[float, int]:
    if requested == AT_UPPER and math.isfinite(up):
        return up, AT_UPPER
    if math.isfinite(lo):
        return lo, AT_LOWER
    if math.isfinite(up):
        return up, AT_UPPER
    return 0.0, AT_ZERO


def solve_lp_arrays(arrays, opts: LpOptions | None = None, lb=None, ub=None) -> LpResult:
    """Solve the LP relaxation of a :class:`ModelArrays` snapshot."""
    solver = BoundedSimplex(arrays.A, arrays.c, arrays.row_lo, arrays.row_hi, opts)
    return solver.solve(arrays.lb if lb is None else lb, arrays.ub if ub is None else ub)
