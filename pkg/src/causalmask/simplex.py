"""Dense bounded-variable primal simplex.

Problems here are tiny (2k policy variables, a handful of rows), so the solver
keeps a full tableau and handles variable bounds directly instead of turning
them into rows.  Entering variables follow Dantzig's rule until a run of
degenerate pivots, then switch to Bland's rule, which cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MalformedProgram

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

TOL = 1e-9
PIVOT_TOL = 1e-11
DEFAULT_MAX_VARIABLES = 10_000
# Consecutive degenerate pivots tolerated before switching to Bland's rule.
DEGENERATE_RUN = 8

_RELATIONS = {"<=": "<=", "≤": "<=", "==": "==", "=": "==", ">=": ">=", "≥": ">="}


@dataclass(frozen=True)
class Constraint:
    coefficients: np.ndarray
    relation: str
    rhs: float


@dataclass
class BoundedLinearProgram:
    """Maximize ``objective @ x`` subject to linear rows and per-variable bounds."""

    objective: np.ndarray
    constraints: list[Constraint] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()

    @property
    def n(self) -> int:
        return self.objective.size

    def add(self, coefficients: Sequence[float], relation: str, rhs: float) -> None:
        self.constraints.append(Constraint(np.asarray(coefficients, dtype=float).ravel(), relation, float(rhs)))


@dataclass(frozen=True)
class LpSolution:
    values: np.ndarray
    objective_value: float
    status: str
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _check(program: BoundedLinearProgram, max_variables: int) -> None:
    n = program.n
    if n == 0:
        raise MalformedProgram("program has no variables")
    if n > max_variables:
        raise MalformedProgram(f"{n} variables exceeds the cap of {max_variables}")
    if program.lower.size != n or program.upper.size != n:
        raise MalformedProgram("bounds must have one entry per variable")
    if not np.all(np.isfinite(program.objective)):
        raise MalformedProgram("objective coefficients must be finite")
    if np.any(np.isnan(program.lower)) or np.any(np.isnan(program.upper)):
        raise MalformedProgram("bounds must not be NaN")
    if np.any(program.lower == np.inf) or np.any(program.upper == -np.inf):
        raise MalformedProgram("lower bound of +inf or upper bound of -inf")
    bad = np.flatnonzero(program.lower > program.upper)
    if bad.size:
        raise MalformedProgram(f"variable {bad[0]} has lower > upper")
    for i, con in enumerate(program.constraints):
        if con.coefficients.size != n:
            raise MalformedProgram(f"constraint {i} has {con.coefficients.size} coefficients, expected {n}")
        if con.relation not in _RELATIONS:
            raise MalformedProgram(f"constraint {i} has unknown relation {con.relation!r}")
        if not (np.all(np.isfinite(con.coefficients)) and np.isfinite(con.rhs)):
            raise MalformedProgram(f"constraint {i} is not finite")


class _Tableau:
    """Bounded simplex on ``A y = b, 0 <= y <= ub`` minimizing ``c @ y``."""

    def __init__(self, A, b, ub, basis):
        self.A = A
        self.b = b
        self.ub = ub
        self.m, self.N = A.shape
        self.basis = np.array(basis, dtype=int)
        self.at_upper = np.zeros(self.N, dtype=bool)
        self.is_basic = np.zeros(self.N, dtype=bool)
        self.is_basic[self.basis] = True
        self.T = A.copy()  # starting basis is an identity block
        self.xB = b.copy()
        self.iterations = 0

    def nonbasic_values(self) -> np.ndarray:
        y = np.where(self.at_upper, self.ub, 0.0)
        y[self.is_basic] = 0.0
        return y

    def values(self) -> np.ndarray:
        y = self.nonbasic_values()
        y[self.basis] = self.xB
        return y

    def refresh(self) -> None:
        """Recompute the tableau and basic values from the original data."""
        B = self.A[:, self.basis]
        try:
            self.T = np.linalg.solve(B, self.A)
            self.xB = np.linalg.solve(B, self.b - self.A @ self.nonbasic_values())
        except np.linalg.LinAlgError:
            pass

    def run(self, c: np.ndarray, max_iter: int) -> str:
        T, ub = self.T, self.ub
        r = c - c[self.basis] @ T
        degenerate = 0
        while True:
            if self.iterations >= max_iter:
                raise RuntimeError("simplex iteration limit reached")
            movable = ~self.is_basic & (ub > 0)
            improving = movable & np.where(self.at_upper, r > TOL, r < -TOL)
            candidates = np.flatnonzero(improving)
            if candidates.size == 0:
                return OPTIMAL
            bland = degenerate >= DEGENERATE_RUN
            if bland:
                j = candidates[0]
            else:
                j = candidates[np.argmax(np.abs(r[candidates]))]
            s = -1.0 if self.at_upper[j] else 1.0
            alpha = s * T[:, j]

            ratios = np.full(self.m, np.inf)
            dec = alpha > PIVOT_TOL
            ratios[dec] = self.xB[dec] / alpha[dec]
            inc = (alpha < -PIVOT_TOL) & np.isfinite(ub[self.basis])
            ratios[inc] = (ub[self.basis][inc] - self.xB[inc]) / -alpha[inc]
            np.maximum(ratios, 0.0, out=ratios)
            t_row = ratios.min() if self.m else np.inf
            t = min(t_row, ub[j])
            if not np.isfinite(t):
                return UNBOUNDED
            self.iterations += 1
            degenerate = degenerate + 1 if t <= TOL else 0

            if ub[j] <= t_row:
                self.xB -= t * alpha
                self.at_upper[j] = not self.at_upper[j]
                continue

            ties = np.flatnonzero(ratios <= t_row + TOL)
            if bland:
                row = ties[np.argmin(self.basis[ties])]
            else:
                row = ties[np.argmax(np.abs(alpha[ties]))]
            leaving = self.basis[row]
            entering_value = t if s > 0 else ub[j] - t
            self.xB -= t * alpha
            self.at_upper[leaving] = alpha[row] < 0
            self.xB[row] = entering_value

            pivot_row = T[row] / T[row, j]
            col = T[:, j].copy()
            T -= np.outer(col, pivot_row)
            T[row] = pivot_row
            r -= r[j] * pivot_row
            self.basis[row] = j
            self.is_basic[leaving] = False
            self.is_basic[j] = True
            self.at_upper[j] = False


def solve_lp(
    program: BoundedLinearProgram,
    *,
    max_variables: int = DEFAULT_MAX_VARIABLES,
    max_iter: int | None = None,
) -> LpSolution:
    """Solve ``program``; infeasible and unbounded programs are reported in ``status``."""
    _check(program, max_variables)
    n = program.n
    lo, hi = program.lower, program.upper
    c_orig = program.objective

    # Shift or reflect every variable so that it lives on [0, width].
    # Free variables are split into a positive and a negative part.
    cols, widths, costs = [], [], []
    recover = []  # (kind, index into internal columns)
    for j in range(n):
        if np.isfinite(lo[j]):
            recover.append(("shift", len(cols)))
            cols.append((j, 1.0))
            widths.append(hi[j] - lo[j])
            costs.append(-c_orig[j])
        elif np.isfinite(hi[j]):
            recover.append(("reflect", len(cols)))
            cols.append((j, -1.0))
            widths.append(np.inf)
            costs.append(c_orig[j])
        else:
            recover.append(("split", len(cols)))
            cols.append((j, 1.0))
            cols.append((j, -1.0))
            widths.extend([np.inf, np.inf])
            costs.extend([-c_orig[j], c_orig[j]])
    offset = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))

    rows = program.constraints
    m = len(rows)
    n_struct = len(cols)
    slack_rows = [i for i, con in enumerate(rows) if _RELATIONS[con.relation] != "=="]
    N = n_struct + len(slack_rows) + m
    A = np.zeros((m, N))
    b = np.zeros(m)
    for i, con in enumerate(rows):
        b[i] = con.rhs - con.coefficients @ offset
        for q, (j, sign) in enumerate(cols):
            A[i, q] = sign * con.coefficients[j]
    for q, i in enumerate(slack_rows):
        A[i, n_struct + q] = 1.0 if _RELATIONS[rows[i].relation] == "<=" else -1.0
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    art0 = n_struct + len(slack_rows)
    A[np.arange(m), art0 + np.arange(m)] = 1.0
    ub = np.concatenate([widths, np.full(len(slack_rows), np.inf), np.full(m, np.inf)])

    if max_iter is None:
        max_iter = 50 * (N + m) + 1000
    tab = _Tableau(A, b, ub, basis=art0 + np.arange(m))

    if m:
        c1 = np.zeros(N)
        c1[art0:] = 1.0
        tab.run(c1, max_iter)
        tab.refresh()
        infeasibility = float(np.sum(tab.values()[art0:]))
        if infeasibility > TOL * max(1.0, float(np.abs(b).max())):
            return LpSolution(np.full(n, np.nan), float("nan"), INFEASIBLE, tab.iterations)
        tab.ub = ub = ub.copy()
        ub[art0:] = 0.0
        tab.xB = np.clip(tab.xB, 0.0, None)
        tab.xB[tab.basis >= art0] = 0.0

    c2 = np.zeros(N)
    c2[:n_struct] = costs
    status = tab.run(c2, max_iter)
    if status == UNBOUNDED:
        return LpSolution(np.full(n, np.nan), float("nan"), UNBOUNDED, tab.iterations)
    tab.refresh()
    y = np.clip(tab.values(), 0.0, ub)

    x = np.empty(n)
    for j, (kind, q) in enumerate(recover):
        if kind == "shift":
            x[j] = lo[j] + y[q]
        elif kind == "reflect":
            x[j] = hi[j] - y[q]
        else:
            x[j] = y[q] - y[q + 1]
    return LpSolution(x, float(c_orig @ x), OPTIMAL, tab.iterations)


def max_violation(program: BoundedLinearProgram, x: np.ndarray) -> float:
    """Largest bound or row violation of ``x``; 0 when feasible."""
    worst = max(0.0, float(np.max(program.lower - x)), float(np.max(x - program.upper)))
    for con in program.constraints:
        lhs = float(con.coefficients @ x)
        rel = _RELATIONS[con.relation]
        if rel == "<=":
            worst = max(worst, lhs - con.rhs)
        elif rel == ">=":
            worst = max(worst, con.rhs - lhs)
        else:
            worst = max(worst, abs(lhs - con.rhs))
    return worst
