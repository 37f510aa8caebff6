"""Dense bounded-variable primal simplex.

Solves ``min c.x`` subject to ``row_lo <= A x <= row_hi`` and
``col_lo <= x <= col_hi`` (column bounds finite).  Each row gets a logical
variable ``s = A x`` carrying the row bounds, so the working system is
``[A  -I] (x, s) = 0``.  Phase one adds one artificial per row that starts
outside its bounds and minimises their sum; phase two pins the artificials
at zero and minimises the true cost from the phase-one basis.

Meant for small models: the basis is refactorised every iteration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = ["LPResult", "SimplexError", "simplex_solve"]

_INF = np.inf


class SimplexError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float
    iterations: int


def _solve_phase(M, cost, lo, hi, basis, values, pivot_tol, opt_tol, max_iter, it0):
    """Run primal simplex iterations in place; returns (status, iterations)."""
    m, n = M.shape
    degenerate_run = 0
    it = it0
    nonbasic = np.ones(n, dtype=bool)
    nonbasic[basis] = False
    while True:
        if it - it0 > max_iter:
            raise SimplexError("iteration limit reached")
        B = M[:, basis]
        try:
            lu = scipy.linalg.lu_factor(B, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SimplexError("singular basis") from exc
        if np.min(np.abs(np.diag(lu[0]))) < pivot_tol:
            raise SimplexError("singular basis")
        rhs = -M[:, nonbasic] @ values[nonbasic]
        values[basis] = scipy.linalg.lu_solve(lu, rhs)
        y = scipy.linalg.lu_solve(lu, cost[basis], trans=1)
        d = cost - M.T @ y

        movable_up = nonbasic & (values < hi - 1e-12) & (d < -opt_tol)
        movable_dn = nonbasic & (values > lo + 1e-12) & (d > opt_tol)
        cand = np.flatnonzero(movable_up | movable_dn)
        if cand.size == 0:
            return "optimal", it
        if degenerate_run > 50:
            j = int(cand[0])  # Bland's rule
        else:
            j = int(cand[np.argmax(np.abs(d[cand]))])
        sigma = 1.0 if d[j] < 0 else -1.0

        alpha = scipy.linalg.lu_solve(lu, M[:, j])
        delta = sigma * alpha  # basic values move by -delta * theta
        theta = hi[j] - lo[j]
        leave = -1
        leave_to_hi = False
        xb = values[basis]
        lb, ub = lo[basis], hi[basis]
        for i in range(m):
            if delta[i] > pivot_tol:
                if lb[i] > -_INF:
                    r = (xb[i] - lb[i]) / delta[i]
                    if r < theta - 1e-12 or (leave >= 0 and r <= theta + 1e-12 and basis[i] < basis[leave]):
                        theta, leave, leave_to_hi = max(r, 0.0), i, False
            elif delta[i] < -pivot_tol:
                if ub[i] < _INF:
                    r = (ub[i] - xb[i]) / (-delta[i])
                    if r < theta - 1e-12 or (leave >= 0 and r <= theta + 1e-12 and basis[i] < basis[leave]):
                        theta, leave, leave_to_hi = max(r, 0.0), i, True
        if not np.isfinite(theta):
            return "unbounded", it
        degenerate_run = degenerate_run + 1 if theta <= 1e-12 else 0
        it += 1
        if leave < 0:
            # entering variable runs to its opposite bound
            values[j] = hi[j] if sigma > 0 else lo[j]
            continue
        out = basis[leave]
        values[j] += sigma * theta
        values[out] = hi[out] if leave_to_hi else lo[out]
        basis[leave] = j
        nonbasic[j] = False
        nonbasic[out] = True


def simplex_solve(c, A, row_lo, row_hi, col_lo, col_hi, pivot_tol=1e-9, opt_tol=1e-9,
                  feas_tol=1e-7, max_iter=50_000) -> LPResult:
    """Solve a bounded LP with the two-phase primal simplex method.

    The pivot tolerance is escalated (x100, up to 1e-5) when a basis turns
    out numerically singular.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.asarray(c, dtype=float)
    n = c.size
    if A.size == 0:
        A = np.zeros((0, n))
    m = A.shape[0]
    col_lo = np.asarray(col_lo, dtype=float)
    col_hi = np.asarray(col_hi, dtype=float)
    row_lo = np.asarray(row_lo, dtype=float)
    row_hi = np.asarray(row_hi, dtype=float)
    if not (np.all(np.isfinite(col_lo)) and np.all(np.isfinite(col_hi))):
        raise SimplexError("column bounds must be finite")
    if np.any(col_lo > col_hi + feas_tol) or np.any(row_lo > row_hi + feas_tol):
        return LPResult("infeasible", None, np.nan, 0)
    if m == 0:
        x = np.where(c < 0, col_hi, col_lo)
        return LPResult("optimal", x, float(c @ x), 0)

    tol = pivot_tol
    while True:
        try:
            return _two_phase(c, A, row_lo, row_hi, col_lo, col_hi, tol, opt_tol, feas_tol, max_iter)
        except SimplexError as exc:
            if "singular" not in str(exc) or tol >= 1e-5:
                raise
            tol *= 100.0


def _two_phase(c, A, row_lo, row_hi, col_lo, col_hi, pivot_tol, opt_tol, feas_tol, max_iter):
    m, n = A.shape
    x = col_lo.copy()
    ax = A @ x
    s = np.clip(ax, row_lo, row_hi)
    resid = s - ax  # need d * art = resid
    sign = np.where(resid >= 0, 1.0, -1.0)
    M = np.hstack([A, -np.eye(m), np.diag(sign)])
    lo = np.concatenate([col_lo, row_lo, np.zeros(m)])
    hi = np.concatenate([col_hi, row_hi, np.full(m, _INF)])
    values = np.concatenate([x, s, np.abs(resid)])

    basis = np.empty(m, dtype=int)
    for r in range(m):
        # rows already inside their bounds start with the logical basic
        basis[r] = n + r if abs(resid[r]) <= feas_tol else n + m + r
    for r in range(m):
        if basis[r] == n + r:
            values[n + m + r] = 0.0
            hi[n + m + r] = 0.0

    cost1 = np.concatenate([np.zeros(n + m), np.ones(m)])
    status, it = _solve_phase(M, cost1, lo, hi, basis, values, pivot_tol, opt_tol, max_iter, 0)
    if values[n + m:].sum() > feas_tol * max(1.0, m):
        return LPResult("infeasible", None, np.nan, it)

    hi[n + m:] = 0.0
    values[n + m:] = np.clip(values[n + m:], 0.0, 0.0)
    cost2 = np.concatenate([c, np.zeros(2 * m)])
    status, it = _solve_phase(M, cost2, lo, hi, basis, values, pivot_tol, opt_tol, max_iter, it)
    if status == "unbounded":
        return LPResult("unbounded", None, -np.inf, it)
    x = values[:n].copy()
    return LPResult("optimal", x, float(c @ x), it)
