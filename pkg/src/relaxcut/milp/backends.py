"""LP engines used underneath the branch-and-bound search.

Both expose the same small surface: change column bounds, append rows,
solve.  ``HighsBackend`` keeps one persistent HiGHS model so that each node
re-solve starts from the previous basis; ``SimplexBackend`` re-runs the
bundled dense simplex from scratch and is only sensible for small models.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .simplex import LPResult, simplex_solve

__all__ = ["HighsBackend", "SimplexBackend", "make_backend", "BACKENDS"]


class SimplexBackend:
    name = "simplex"

    def __init__(self, c, A, row_lo, row_hi, col_lo, col_hi, pivot_tol=1e-9):
        self.c = np.asarray(c, dtype=float)
        self.A = sp.csr_matrix(A)
        self.row_lo = np.asarray(row_lo, dtype=float)
        self.row_hi = np.asarray(row_hi, dtype=float)
        self.col_lo = np.array(col_lo, dtype=float)
        self.col_hi = np.array(col_hi, dtype=float)
        self.pivot_tol = pivot_tol

    def set_col_bounds(self, idx, lo, hi):
        self.col_lo[idx] = lo
        self.col_hi[idx] = hi

    def add_rows(self, A_new, lo, hi):
        self.A = sp.vstack([self.A, sp.csr_matrix(A_new)], format="csr")
        self.row_lo = np.concatenate([self.row_lo, lo])
        self.row_hi = np.concatenate([self.row_hi, hi])

    def probe(self, j, lo, hi, restore, iteration_limit):
        """Objective with column ``j`` bounded to [lo, hi]; inf if infeasible.

        ``restore`` is the (lo, hi) pair put back afterwards.
        """
        self.col_lo[j], self.col_hi[j] = lo, hi
        try:
            res = self.solve()
        finally:
            self.col_lo[j], self.col_hi[j] = restore
        return res.objective if res.status == "optimal" else np.inf

    def solve(self) -> LPResult:
        return simplex_solve(self.c, self.A.toarray(), self.row_lo, self.row_hi,
                             self.col_lo, self.col_hi, pivot_tol=self.pivot_tol)


class HighsBackend:
    name = "highs"

    def __init__(self, c, A, row_lo, row_hi, col_lo, col_hi, pivot_tol=1e-9):
        import highspy

        self._hs = highspy
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("random_seed", 0)
        h.setOptionValue("primal_feasibility_tolerance", 1e-9)
        h.setOptionValue("dual_feasibility_tolerance", 1e-9)
        n = len(c)
        inf = highspy.kHighsInf
        lp = highspy.HighsLp()
        lp.num_col_ = n
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = np.asarray(c, dtype=float)
        lp.col_lower_ = np.asarray(col_lo, dtype=float)
        lp.col_upper_ = np.asarray(col_hi, dtype=float)
        lp.row_lower_ = np.where(np.isneginf(row_lo), -inf, row_lo).astype(float)
        lp.row_upper_ = np.where(np.isposinf(row_hi), inf, row_hi).astype(float)
        csc = sp.csc_matrix(A)
        csc.sort_indices()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = csc.indptr.astype(np.int32)
        lp.a_matrix_.index_ = csc.indices.astype(np.int32)
        lp.a_matrix_.value_ = csc.data.astype(float)
        h.passModel(lp)
        self.h = h
        self.n = n

    def set_col_bounds(self, idx, lo, hi):
        idx = np.asarray(idx, dtype=np.int32)
        if idx.size:
            self.h.changeColsBounds(idx.size, idx, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))

    def add_rows(self, A_new, lo, hi):
        csr = sp.csr_matrix(A_new)
        csr.sort_indices()
        inf = self._hs.kHighsInf
        lo = np.where(np.isneginf(lo), -inf, lo).astype(float)
        hi = np.where(np.isposinf(hi), inf, hi).astype(float)
        self.h.addRows(csr.shape[0], lo, hi, csr.nnz, csr.indptr[:-1].astype(np.int32),
                       csr.indices.astype(np.int32), csr.data.astype(float))

    def probe(self, j, lo, hi, restore, iteration_limit):
        """Dual bound with column ``j`` bounded to [lo, hi]; inf if infeasible.

        The dual simplex objective is a valid lower bound at every iteration,
        so an iteration-limited probe still gives a usable estimate.  The
        bounds ``restore`` and the starting basis are put back afterwards.
        """
        h = self.h
        basis = h.getBasis()
        h.changeColBounds(int(j), float(lo), float(hi))
        h.setOptionValue("simplex_iteration_limit", int(iteration_limit))
        try:
            h.run()
            st = h.getModelStatus()
            MS = self._hs.HighsModelStatus
            if st == MS.kInfeasible:
                value = np.inf
            elif st in (MS.kOptimal, MS.kIterationLimit):
                value = float(h.getInfo().objective_function_value)
            else:
                value = np.nan
        finally:
            h.setOptionValue("simplex_iteration_limit", 2**31 - 1)
            h.changeColBounds(int(j), float(restore[0]), float(restore[1]))
            h.setBasis(basis)
        return value

    def solve(self) -> LPResult:
        h = self.h
        h.run()
        st = h.getModelStatus()
        MS = self._hs.HighsModelStatus
        iters = int(h.getInfo().simplex_iteration_count)
        if st == MS.kOptimal:
            x = np.array(h.getSolution().col_value)
            return LPResult("optimal", x, float(h.getInfo().objective_function_value), iters)
        if st == MS.kInfeasible:
            return LPResult("infeasible", None, np.nan, iters)
        if st in (MS.kUnbounded, MS.kUnboundedOrInfeasible):
            # resolve the ambiguity from scratch
            h.clearSolver()
            h.run()
            st = h.getModelStatus()
            if st == MS.kInfeasible:
                return LPResult("infeasible", None, np.nan, iters)
            if st == MS.kOptimal:
                x = np.array(h.getSolution().col_value)
                return LPResult("optimal", x, float(h.getInfo().objective_function_value), iters)
            return LPResult("unbounded", None, -np.inf, iters)
        # numerical trouble: one retry from a fresh factorisation
        h.clearSolver()
        h.run()
        if h.getModelStatus() == MS.kOptimal:
            x = np.array(h.getSolution().col_value)
            return LPResult("optimal", x, float(h.getInfo().objective_function_value), iters)
        if h.getModelStatus() == MS.kInfeasible:
            return LPResult("infeasible", None, np.nan, iters)
        raise RuntimeError(f"LP solve failed with HiGHS status {h.modelStatusToString(h.getModelStatus())}")


BACKENDS = {"highs": HighsBackend, "simplex": SimplexBackend}


def make_backend(name, *args, **kwargs):
    try:
        return BACKENDS[name](*args, **kwargs)
    except KeyError:
        raise ValueError(f"unknown LP backend {name!r}") from None
