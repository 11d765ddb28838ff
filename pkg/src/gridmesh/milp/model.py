"""Sparse MILP model container shared by every formulation in the package."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ModelError(ValueError):
    """Raised when a model violates its structural invariants."""


class VarKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    INTEGER = "integer"


class Sense(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclass
class VarMeta:
    name: str
    lower: float = 0.0
    upper: float = math.inf
    kind: VarKind = VarKind.CONTINUOUS
    obj: float = 0.0

    @property
    def is_integer(self) -> bool:
        return self.kind is not VarKind.CONTINUOUS


@dataclass
class Row:
    indices: tuple[int, ...]
    coefs: tuple[float, ...]
    sense: Sense
    rhs: float
    name: str = ""


@dataclass
class ModelArrays:
    """Column-oriented snapshot of a model used by the solvers."""

    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sp.csc_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    integer: np.ndarray  # bool mask
    obj_offset: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class MilpSolution:
    status: Status
    objective: float = math.nan
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bound: float = -math.inf
    node_count: int = 0
    simplex_iters: int = 0

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def gap(self) -> float:
        if not math.isfinite(self.objective) or not math.isfinite(self.bound):
            return math.inf
        return (self.objective - self.bound) / max(abs(self.objective), 1e-10)


class MilpModel:
    """Minimization model with sparse rows and per-variable metadata."""

    def __init__(self, name: str = ""):
        self.name = name
        self.variables: list[VarMeta] = []
        self.rows: list[Row] = []
        self.obj_offset = 0.0

    def __repr__(self) -> str:
        return f"MilpModel({self.name!r}, vars={self.num_vars}, rows={self.num_rows})"

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def add_var(self, name: str, lower: float = 0.0, upper: float = math.inf,
                kind: VarKind | str = VarKind.CONTINUOUS, obj: float = 0.0) -> int:
        kind = VarKind(kind)
        if kind is VarKind.BINARY:
            lower, upper = max(lower, 0.0), min(upper, 1.0)
        self.variables.append(VarMeta(name, float(lower), float(upper), kind, float(obj)))
        return len(self.variables) - 1

    def add_row(self, terms, sense: Sense | str, rhs: float, name: str = "") -> int:
        """Add ``sum(coef * x[idx]) <sense> rhs``; ``terms`` is a mapping or (idx, coef) pairs.

        Repeated indices are merged and exact zeros dropped.
        """
        items = terms.items() if isinstance(terms, dict) else terms
        merged: dict[int, float] = {}
        for idx, coef in items:
            merged[int(idx)] = merged.get(int(idx), 0.0) + float(coef)
        idxs = tuple(i for i, v in merged.items() if v != 0.0)
        coefs = tuple(merged[i] for i in idxs)
        self.rows.append(Row(idxs, coefs, Sense(sense), float(rhs), name))
        return len(self.rows) - 1

    def add_obj(self, idx: int, coef: float) -> None:
        self.variables[idx].obj += float(coef)

    def fix(self, idx: int, value: float) -> None:
        v = self.variables[idx]
        v.lower = v.upper = float(value)

    def copy(self) -> "MilpModel":
        other = MilpModel(self.name)
        other.variables = [VarMeta(v.name, v.lower, v.upper, v.kind, v.obj) for v in self.variables]
        other.rows = list(self.rows)  # rows are never mutated in place
        other.obj_offset = self.obj_offset
        return other

    def relaxed(self) -> "MilpModel":
        """Copy with every integrality requirement dropped."""
        other = self.copy()
        for v in other.variables:
            v.kind = VarKind.CONTINUOUS
        return other

    def validate(self) -> None:
        n = self.num_vars
        for j, v in enumerate(self.variables):
            if math.isnan(v.lower) or math.isnan(v.upper) or not math.isfinite(v.obj):
                raise ModelError(f"variable {v.name!r} has NaN bound or non-finite cost")
            if v.lower > v.upper:
                raise ModelError(f"variable {v.name!r} has lower {v.lower} > upper {v.upper}")
            if v.kind is VarKind.BINARY and (v.lower < 0 or v.upper > 1):
                raise ModelError(f"binary {v.name!r} bounds outside [0, 1]")
            if v.kind is VarKind.INTEGER and not (math.isfinite(v.lower) and math.isfinite(v.upper)):
                raise ModelError(f"integer {v.name!r} needs finite bounds")
        for r in self.rows:
            if not math.isfinite(r.rhs):
                raise ModelError(f"row {r.name!r} has non-finite rhs")
            for i, a in zip(r.indices, r.coefs):
                if not 0 <= i < n:
                    raise ModelError(f"row {r.name!r} references undeclared variable {i}")
                if not math.isfinite(a):
                    raise ModelError(f"row {r.name!r} has non-finite coefficient")

    def arrays(self) -> ModelArrays:
        n, m = self.num_vars, self.num_rows
        c = np.array([v.obj for v in self.variables], dtype=float)
        lb = np.array([v.lower for v in self.variables], dtype=float)
        ub = np.array([v.upper for v in self.variables], dtype=float)
        integer = np.array([v.is_integer for v in self.variables], dtype=bool)
        nnz = sum(len(r.indices) for r in self.rows)
        ri = np.empty(nnz, dtype=np.int64)
        ci = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=float)
        row_lo = np.full(m, -np.inf)
        row_hi = np.full(m, np.inf)
        k = 0
        for i, r in enumerate(self.rows):
            L = len(r.indices)
            ri[k:k + L] = i
            ci[k:k + L] = r.indices
            vals[k:k + L] = r.coefs
            k += L
            if r.sense is not Sense.GE:
                row_hi[i] = r.rhs
            if r.sense is not Sense.LE:
                row_lo[i] = r.rhs
        A = sp.csc_matrix((vals, (ri, ci)), shape=(m, n))
        A.sum_duplicates()
        return ModelArrays(c, lb, ub, A, row_lo, row_hi, integer, self.obj_offset)

    def objective_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.dot([v.obj for v in self.variables], x)) + self.obj_offset

    def max_violation(self, x) -> float:
        """Largest bound or row violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for j, v in enumerate(self.variables):
            worst = max(worst, v.lower - x[j], x[j] - v.upper)
        for r in self.rows:
            act = sum(a * x[i] for i, a in zip(r.indices, r.coefs))
            if r.sense is Sense.LE:
                worst = max(worst, act - r.rhs)
            elif r.sense is Sense.GE:
                worst = max(worst, r.rhs - act)
            else:
                worst = max(worst, abs(act - r.rhs))
        return worst

    def integrality_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for j, v in enumerate(self.variables):
            if v.is_integer:
                worst = max(worst, abs(x[j] - round(x[j])))
        return worst
