"""Dense strictly-convex QP solver for the force-allocation problems.

Solves   min 1/2 x^T H x + g^T x   s.t.  C x <= b   with H symmetric
positive definite, by a dual active-set method in the Goldfarb-Idnani
style: start at the unconstrained minimizer (or at the minimizer over a
warm-started working set), repeatedly pull the most violated constraint
into the working set with paired primal/dual steps, and drop blocking
constraints whose multipliers would turn negative.  Every iterate is
optimal for its working set, so no phase-1 feasibility search is needed,
termination is guaranteed for positive definite H, and re-solving an
unchanged problem from its previous active set finishes immediately.

Problem sizes here are tiny (tens of variables, low hundreds of rows),
so each step refactorizes the small working-set system directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"

_FEAS_TOL = 1e-9
_PIVOT_TOL = 1e-11


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    iterations: int
    active_set: tuple
    duals: np.ndarray
    stationarity: float = 0.0
    primal_violation: float = 0.0
    complementarity: float = 0.0

    @property
    def kkt_residual(self) -> float:
        return max(self.stationarity, self.primal_violation, self.complementarity)


class _WorkingSet:
    """Maintains the minimizer of the QP restricted to C_W x = b_W."""

    def __init__(self, H, g, C, b):
        self.H_chol = cho_factor(H, check_finite=False)
        self.g = g
        self.C = C
        self.b = b
        self.x_free = cho_solve(self.H_chol, -g, check_finite=False)
        self.rows: list[int] = []
        self.hinv_ct = np.zeros((g.shape[0], 0))

    def hinv(self, v):
        return cho_solve(self.H_chol, v, check_finite=False)

    def schur(self):
        return self.C[self.rows] @ self.hinv_ct

    def try_add(self, row: int) -> bool:
        """Add a row if it keeps the working-set system well conditioned."""
        col = self.hinv(self.C[row])
        candidate = np.column_stack([self.hinv_ct, col])
        S = self.C[self.rows + [row]] @ candidate
        try:
            np.linalg.cholesky(S + _PIVOT_TOL * np.eye(S.shape[0]))
        except np.linalg.LinAlgError:
            return False
        self.rows.append(row)
        self.hinv_ct = candidate
        return True

    def seed(self, rows):
        """Prime the working set from a previous active set in one factorization."""
        rows = [int(r) for r in dict.fromkeys(rows) if 0 <= r < self.C.shape[0]]
        if not rows:
            return
        cols = cho_solve(self.H_chol, self.C[rows].T, check_finite=False)
        S = self.C[rows] @ cols
        try:
            np.linalg.cholesky(S + _PIVOT_TOL * np.eye(S.shape[0]))
        except np.linalg.LinAlgError:
            for row in rows:
                self.try_add(row)
            return
        self.rows = rows
        self.hinv_ct = cols

    def drop(self, position: int):
        self.rows.pop(position)
        self.hinv_ct = np.delete(self.hinv_ct, position, axis=1)

    def solve(self):
        """Return (x, lam) optimal subject to the current working set."""
        if not self.rows:
            return self.x_free.copy(), np.zeros(0)
        S = self.schur()
        lam = np.linalg.solve(S, self.C[self.rows] @ self.x_free - self.b[self.rows])
        x = self.x_free - self.hinv_ct @ lam
        return x, lam


def solve_qp(H, g, C=None, b=None, warm_active=(), max_iter=None) -> QpSolution:
    """Solve the inequality-constrained QP; see module docstring.

    warm_active seeds the working set with constraint rows (typically the
    active set of the previous, similar problem).  Returns status
    'infeasible' when no point satisfies C x <= b, or 'max_iterations'
    with the best iterate if the safeguard limit is hit.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = g.shape[0]
    if n == 0:
        return QpSolution(np.zeros(0), OPTIMAL, 0, (), np.zeros(0 if C is None else len(C)))
    if C is None or len(C) == 0:
        x = cho_solve(cho_factor(H, check_finite=False), -g, check_finite=False)
        res = float(np.linalg.norm(H @ x + g, np.inf))
        return QpSolution(x, OPTIMAL, 0, (), np.zeros(0), stationarity=res)

    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    m = C.shape[0]
    if max_iter is None:
        max_iter = 50 * (m + 5)
    scale = max(1.0, float(np.abs(b).max()))
    feas_tol = _FEAS_TOL * scale

    ws = _WorkingSet(H, g, C, b)
    if warm_active:
        ws.seed(warm_active)

    x, lam = ws.solve()
    iterations = 0
    # Seed must be dual feasible: drop any warm-started rows with negative duals.
    while lam.size and lam.min() < -_PIVOT_TOL:
        ws.drop(int(np.argmin(lam)))
        x, lam = ws.solve()
        iterations += 1

    status = MAX_ITERATIONS
    while iterations < max_iter:
        iterations += 1
        residuals = C @ x - b
        if ws.rows:
            residuals[ws.rows] = 0.0
        p = int(np.argmax(residuals))
        if residuals[p] <= feas_tol:
            status = OPTIMAL
            break

        s_p = residuals[p]
        lam_p = 0.0
        c_p = C[p]
        hinv_cp = ws.hinv(c_p)
        while iterations < max_iter:
            if ws.rows:
                S = ws.schur()
                r = np.linalg.solve(S, C[ws.rows] @ hinv_cp)
                z = hinv_cp - ws.hinv_ct @ r
            else:
                r = np.zeros(0)
                z = hinv_cp
            denom = float(c_p @ z)

            t_full = s_p / denom if denom > _PIVOT_TOL else np.inf
            t_block, block = np.inf, -1
            for k, rk in enumerate(r):
                if rk > _PIVOT_TOL and lam[k] / rk < t_block:
                    t_block, block = lam[k] / rk, k
            t = min(t_full, t_block)
            if not np.isfinite(t):
                return _finish(ws, x, lam, INFEASIBLE, iterations, m, C, b, g, H)

            if np.isfinite(t_full):
                x = x - t * z
                s_p -= t * denom
            lam = lam - t * r
            lam_p += t

            if t == t_full:
                ws.rows.append(p)
                ws.hinv_ct = np.column_stack([ws.hinv_ct, hinv_cp])
                lam = np.append(lam, lam_p)
                break
            lam = np.delete(lam, block)
            ws.drop(block)
            iterations += 1

    return _finish(ws, x, lam, status, iterations, m, C, b, g, H)


def _finish(ws, x, lam, status, iterations, m, C, b, g, H):
    duals = np.zeros(m)
    for k, row in enumerate(ws.rows):
        duals[row] = lam[k]
    stationarity = float(np.linalg.norm(H @ x + g + C.T @ duals, np.inf))
    violation = float(max(0.0, (C @ x - b).max())) if m else 0.0
    comp = float(np.abs(duals * (C @ x - b)).max()) if m else 0.0
    return QpSolution(
        x=x,
        status=status,
        iterations=iterations,
        active_set=tuple(ws.rows),
        duals=duals,
        stationarity=stationarity,
        primal_violation=violation,
        complementarity=comp,
    )
