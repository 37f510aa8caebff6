"""Best-bound branch-and-bound with an integer-solution callback.

The callback sees every integral LP point (binaries rounded) before it can
become the incumbent.  Constraints it returns are appended to the one LP
shared by the whole tree, so they bind every node solved afterwards; the
node that triggered them is re-solved in place.  Nothing else about the
search is reset.
"""
from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from ..formulation import BINARY, Constraint, ModelSpec
from .backends import make_backend

__all__ = ["Status", "SolveControls", "SolveStats", "SolveOutcome", "MilpError", "solve_lp", "solve_milp", "model_rows"]

log = logging.getLogger(__name__)


class MilpError(RuntimeError):
    pass


class Status(str, Enum):
    OPTIMAL = "optimal-within-gap"
    TIME_LIMIT = "feasible-time-limit"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class SolveControls:
    mip_gap: float = 1e-3
    time_limit: float = 3600.0
    node_limit: int | None = None
    integer_feasibility_tol: float = 1e-6
    lp_pivot_tol: float = 1e-9
    backend: str = "highs"
    dive_frequency: int = 50  # run the diving heuristic at the root and every n nodes; 0 disables
    branching: str = "reliability"  # "reliability", "pseudocost" or "most-fractional"
    strong_candidates: int = 8  # reliability branching: candidates probed per node
    strong_iterations: int = 100  # simplex iteration cap per probe

    def __post_init__(self):
        if self.mip_gap < 0:
            raise ValueError("mip_gap must be >= 0")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be > 0")
        if self.branching not in ("reliability", "pseudocost", "most-fractional"):
            raise ValueError(f"unknown branching rule {self.branching!r}")


@dataclass
class SolveStats:
    nodes: int = 0
    lp_solves: int = 0
    simplex_iterations: int = 0
    cuts_added: int = 0
    callback_calls: int = 0
    dives: int = 0
    wall_time: float = 0.0
    bound_trace: list = field(default_factory=list)
    incumbent_trace: list = field(default_factory=list)


@dataclass
class SolveOutcome:
    status: Status
    incumbent: np.ndarray | None
    objective: float
    best_bound: float
    stats: SolveStats

    @property
    def gap(self) -> float:
        if self.incumbent is None:
            return np.inf
        return (self.objective - self.best_bound) / max(1.0, abs(self.objective))


def rows_of(constraints: Sequence[Constraint], n: int):
    indptr = [0]
    idx, val, lo, hi = [], [], [], []
    for con in constraints:
        idx.append(con.indices)
        val.append(con.coefs)
        indptr.append(indptr[-1] + len(con.indices))
        lo.append(-np.inf if con.sense == "<=" else con.rhs)
        hi.append(np.inf if con.sense == ">=" else con.rhs)
    data = np.concatenate(val) if val else np.zeros(0)
    ind = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
    A = sp.csr_matrix((data, ind, np.array(indptr)), shape=(len(constraints), n))
    return A, np.array(lo, dtype=float), np.array(hi, dtype=float)


def model_rows(model: ModelSpec):
    return rows_of(model.constraints, model.n_vars)


def solve_lp(model: ModelSpec, backend: str = "highs", pivot_tol: float = 1e-9) -> SolveOutcome:
    """Solve a model whose variables are all continuous."""
    if any(d == BINARY for d in model.domains):
        raise MilpError("solve_lp needs a model without binary variables (use model.relaxed())")
    t0 = time.perf_counter()
    A, lo, hi = model_rows(model)
    lp = make_backend(backend, model.c, A, lo, hi, model.lo, model.hi, pivot_tol=pivot_tol)
    res = lp.solve()
    stats = SolveStats(nodes=1, lp_solves=1, simplex_iterations=res.iterations,
                       wall_time=time.perf_counter() - t0)
    if res.status == "optimal":
        return SolveOutcome(Status.OPTIMAL, res.x, res.objective, res.objective, stats)
    if res.status == "infeasible":
        return SolveOutcome(Status.INFEASIBLE, None, np.inf, np.inf, stats)
    return SolveOutcome(Status.UNBOUNDED, None, -np.inf, -np.inf, stats)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    # (variable, direction 0=down/1=up, distance moved) of the branch that created the node
    branch: tuple | None = field(default=None, compare=False)


def _scores(vals, fractional, pc_sum, pc_cnt) -> np.ndarray:
    """Pseudocost product score; unseen directions use the running average."""
    f_down = vals - np.floor(vals)
    avg = []
    for d in (0, 1):
        seen = pc_cnt[d] > 0
        avg.append(pc_sum[d][seen].sum() / pc_cnt[d][seen].sum() if seen.any() else 1.0)
    psi_d = np.where(pc_cnt[0] > 0, pc_sum[0] / np.maximum(pc_cnt[0], 1), avg[0])
    psi_u = np.where(pc_cnt[1] > 0, pc_sum[1] / np.maximum(pc_cnt[1], 1), avg[1])
    eps = 1e-6
    score = np.maximum(psi_d * f_down, eps) * np.maximum(psi_u * (1.0 - f_down), eps)
    return np.where(fractional, score, -1.0)


def _pick_branch(vals, fractional, rank, pc_sum, pc_cnt, rule) -> int:
    if rule == "most-fractional":
        f_down = vals - np.floor(vals)
        score = np.where(fractional, np.minimum(f_down, 1.0 - f_down), -1.0)
    else:
        score = _scores(vals, fractional, pc_sum, pc_cnt)
    best = score.max()
    ties = np.flatnonzero(score >= best - 1e-12 * max(1.0, abs(best)))
    return int(ties[np.argmin(rank[ties])])


def solve_milp(
    model: ModelSpec,
    controls: SolveControls = SolveControls(),
    on_integer_solution: Callable[[np.ndarray], list[Constraint]] | None = None,
    initial_solution: np.ndarray | None = None,
) -> SolveOutcome:
    """Branch-and-bound over the binaries of ``model``.

    Node selection is depth-first until the first incumbent, best-bound
    afterwards.  Branching uses pseudocosts (per-unit bound change observed
    on earlier branches, product score); variables without history take the
    running average, and ties are broken by variable name.  Under the
    default ``branching="reliability"`` the best few candidates that lack
    history in either direction are first probed with iteration-limited
    LP solves, which seeds their pseudocosts.  ``"most-fractional"`` takes
    the most fractional binary.  ``initial_solution`` (optional) is offered to the
    callback like any other integral point before the search starts.
    """
    t0 = time.perf_counter()
    stats = SolveStats()
    A, rlo, rhi = model_rows(model)
    lp = make_backend(controls.backend, model.c, A, rlo, rhi, model.lo, model.hi, pivot_tol=controls.lp_pivot_tol)
    c = model.c
    int_idx = np.flatnonzero(model.integer_mask)
    rank = np.empty(len(int_idx), dtype=int)
    rank[np.argsort([repr(model.names[i]) for i in int_idx], kind="stable")] = np.arange(len(int_idx))
    tol = controls.integer_feasibility_tol
    pool: list[Constraint] = []

    incumbent: np.ndarray | None = None
    inc_obj = np.inf
    best_bound = -np.inf
    seq = 0
    pc_sum = np.zeros((2, len(int_idx)))
    pc_cnt = np.zeros((2, len(int_idx)))

    def gap_closed(lb: float) -> bool:
        return incumbent is not None and (inc_obj - lb) / max(1.0, abs(inc_obj)) <= controls.mip_gap

    def offer(point: np.ndarray) -> list[Constraint]:
        stats.callback_calls += 1
        if on_integer_solution is None:
            return []
        try:
            cuts = list(on_integer_solution(point))
        except Exception as exc:  # noqa: BLE001 - surfaced as a solve failure
            raise MilpError(f"integer-solution callback failed: {exc!r}") from exc
        return cuts

    def add_cuts(cuts: list[Constraint]) -> None:
        A_new, lo_new, hi_new = rows_of(cuts, model.n_vars)
        lp.add_rows(A_new, lo_new, hi_new)
        pool.extend(cuts)
        stats.cuts_added += len(cuts)

    def accept(point: np.ndarray) -> None:
        nonlocal incumbent, inc_obj
        obj = float(c @ point)
        if obj < inc_obj:
            incumbent, inc_obj = point, obj
            stats.incumbent_trace.append((stats.nodes, obj))

    if initial_solution is not None:
        point = np.asarray(initial_solution, dtype=float).copy()
        point[int_idx] = np.rint(point[int_idx])
        feasible = model.max_violation(point) <= 1e-6
        if feasible:
            cuts = offer(point)
            if cuts:
                add_cuts(cuts)
            elif all(con.violation(point) <= 1e-6 for con in pool):
                accept(point)

    def dive(lo: np.ndarray, hi: np.ndarray, xv: np.ndarray) -> None:
        """Fractional diving: fix the least fractional binary and re-solve."""
        stats.dives += 1
        lo, hi = lo.copy(), hi.copy()
        for _ in range(2 * len(int_idx) + 1):
            vals = xv[int_idx]
            frac = np.abs(vals - np.rint(vals))
            fractional = frac > tol
            if not fractional.any():
                point = xv.copy()
                point[int_idx] = np.rint(vals)
                cuts = offer(point)
                if not cuts:
                    accept(point)
                    return
                if max(con.violation(point) for con in cuts) <= 1e-9:
                    return
                add_cuts(cuts)
            else:
                cand = np.flatnonzero(fractional)
                key = frac[cand] + 1e-9 * rank[cand] / max(1, len(rank))
                j = int(cand[np.argmin(key)])
                target = float(np.rint(vals[j]))
                lo[j] = hi[j] = target
            for attempt in range(2):
                lp.set_col_bounds(int_idx, lo, hi)
                res = lp.solve()
                stats.lp_solves += 1
                stats.simplex_iterations += res.iterations
                if res.status == "optimal" and res.objective < inc_obj:
                    break
                if attempt == 0 and fractional.any():
                    lo[j] = hi[j] = 1.0 - target
                else:
                    return
            else:
                return
            xv = res.x

    def probe_candidates(node: _Node, vals: np.ndarray, fractional: np.ndarray, obj: float) -> None:
        score = _scores(vals, fractional, pc_sum, pc_cnt)
        order = np.lexsort((rank, -score))
        order = order[fractional[order]][: controls.strong_candidates]
        for k in order:
            if pc_cnt[0, k] > 0 and pc_cnt[1, k] > 0:
                continue
            col = int_idx[k]
            f = vals[k] - np.floor(vals[k])
            restore = (node.lo[k], node.hi[k])
            for d, (blo, bhi, dist) in enumerate(((node.lo[k], np.floor(vals[k]), f),
                                                   (np.ceil(vals[k]), node.hi[k], 1.0 - f))):
                value = lp.probe(col, blo, bhi, restore, controls.strong_iterations)
                stats.lp_solves += 1
                if np.isfinite(value):
                    pc_sum[d, k] += max(value - obj, 0.0) / dist
                    pc_cnt[d, k] += 1

    open_nodes: list[_Node] = [_Node(-np.inf, seq, 0, model.lo[int_idx].copy(), model.hi[int_idx].copy())]
    heap_mode = incumbent is not None
    status = None

    while open_nodes:
        if heap_mode:
            lb = open_nodes[0].bound
        else:
            lb = min(nd.bound for nd in open_nodes)
        if incumbent is not None:
            lb = min(lb, inc_obj)
        if lb > best_bound:
            best_bound = lb
            stats.bound_trace.append((stats.nodes, best_bound))
        if gap_closed(best_bound):
            break
        if time.perf_counter() - t0 > controls.time_limit or (
            controls.node_limit is not None and stats.nodes >= controls.node_limit
        ):
            status = Status.TIME_LIMIT
            break

        if incumbent is not None and not heap_mode:
            heapq.heapify(open_nodes)
            heap_mode = True
        node = heapq.heappop(open_nodes) if heap_mode else open_nodes.pop()
        if node.bound >= inc_obj:
            continue
        stats.nodes += 1
        lp.set_col_bounds(int_idx, node.lo, node.hi)

        while True:
            res = lp.solve()
            stats.lp_solves += 1
            stats.simplex_iterations += res.iterations
            if res.status == "unbounded":
                if incumbent is None and node.depth == 0:
                    stats.wall_time = time.perf_counter() - t0
                    return SolveOutcome(Status.UNBOUNDED, None, -np.inf, -np.inf, stats)
                raise MilpError("LP relaxation unbounded below an integral node")
            if node.branch is not None and res.status == "optimal":
                bj, bd, dist = node.branch
                pc_sum[bd, bj] += max(res.objective - node.bound, 0.0) / dist
                pc_cnt[bd, bj] += 1
                node.branch = None
            if res.status == "infeasible" or res.objective >= inc_obj:
                break
            xv = res.x
            vals = xv[int_idx]
            frac = np.abs(vals - np.rint(vals))
            fractional = frac > tol
            if not fractional.any():
                point = xv.copy()
                point[int_idx] = np.rint(vals)
                cuts = offer(point)
                if cuts:
                    if max(con.violation(point) for con in cuts) <= 1e-9:
                        log.warning("callback returned cuts that do not separate the point; pruning node")
                        break
                    add_cuts(cuts)
                    continue
                accept(point)
                break
            if controls.dive_frequency and (stats.nodes == 1 or stats.nodes % controls.dive_frequency == 0):
                dive(node.lo, node.hi, xv)
            if controls.branching == "reliability":
                probe_candidates(node, vals, fractional, res.objective)
            j = _pick_branch(vals, fractional, rank, pc_sum, pc_cnt, controls.branching)
            v = vals[j]
            f = v - np.floor(v)
            down = _Node(res.objective, 0, node.depth + 1, node.lo.copy(), node.hi.copy(), (j, 0, f))
            down.hi[j] = np.floor(v)
            up = _Node(res.objective, 0, node.depth + 1, node.lo.copy(), node.hi.copy(), (j, 1, 1.0 - f))
            up.lo[j] = np.ceil(v)
            first, second = (up, down) if v - np.floor(v) >= 0.5 else (down, up)
            for child in (second, first):
                seq += 1
                child.seq = seq
                if heap_mode:
                    heapq.heappush(open_nodes, child)
                else:
                    open_nodes.append(child)
            break

    if not open_nodes and status is None:
        final_bound = inc_obj if incumbent is not None else np.inf
        if final_bound > best_bound:
            best_bound = final_bound
            stats.bound_trace.append((stats.nodes, best_bound))
    stats.wall_time = time.perf_counter() - t0
    if incumbent is None:
        if status == Status.TIME_LIMIT:
            return SolveOutcome(Status.TIME_LIMIT, None, np.inf, best_bound, stats)
        return SolveOutcome(Status.INFEASIBLE, None, np.inf, np.inf, stats)
    if status is None:
        status = Status.OPTIMAL
    best_bound = min(best_bound, inc_obj)
    return SolveOutcome(status, incumbent, inc_obj, best_bound, stats)
