"""Security-constraint screening and the two lazy enforcement strategies.

``solve_with_dynamic_cuts`` screens every integral point found inside the
branch-and-bound search and injects the most violated flow limits without
restarting.  ``solve_with_filtering`` is the transmission-filtering
baseline: solve to completion, screen, add cuts, re-solve from scratch.
"""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .formulation import ModelSpec, SecurityCutId, build_model, security_constraint
from .instance import Instance
from .milp import SolveControls, SolveOutcome, Status, solve_milp
from .network import BALANCE_TOL, SensitivitySet

__all__ = [
    "ScreeningError",
    "Violation",
    "CutPool",
    "CutSolve",
    "screen",
    "select_cuts",
    "solve_with_dynamic_cuts",
    "solve_with_filtering",
    "solve_enumerated",
    "solve_scuc",
    "VIOLATION_TOL",
    "CUT_CAP",
]

log = logging.getLogger(__name__)

VIOLATION_TOL = 1e-5
CUT_CAP = 15


class ScreeningError(ValueError):
    pass


class Violation(NamedTuple):
    id: SecurityCutId
    flow: float
    limit: float
    normalized_excess: float
    order: tuple  # (period, contingency position, line position, direction)


@dataclass
class CutPool:
    cuts: dict = field(default_factory=dict)  # SecurityCutId -> (flow, limit) when first added

    def __contains__(self, cut_id) -> bool:
        return cut_id in self.cuts

    def __len__(self) -> int:
        return len(self.cuts)

    def add(self, v: Violation) -> None:
        if v.id in self.cuts:
            raise ValueError(f"duplicate cut {v.id}")
        self.cuts[v.id] = (v.flow, v.limit)

    def ids(self) -> list[SecurityCutId]:
        return list(self.cuts)

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["line", "period", "contingency", "direction", "flow", "limit"])
            for cid, (flow, limit) in self.cuts.items():
                wr.writerow([cid.line, cid.period, cid.contingency or "base", cid.direction,
                             f"{flow:.12g}", f"{limit:.12g}"])


@dataclass
class CutSolve:
    outcome: SolveOutcome
    pool: CutPool
    rounds: int = 1  # outer solves (filtering) or 1
    screen_evaluations: int = 0
    wall_time: float = 0.0


def limit_table(instance: Instance) -> np.ndarray:
    """(line, 1 + contingency) thermal limits; column 0 is the base case."""
    n_l, n_c = len(instance.lines), len(instance.contingencies)
    lim = np.empty((n_l, n_c + 1))
    lim[:, 0] = [ln.limit_base for ln in instance.lines]
    lim[:, 1:] = np.array([ln.limit_contingency for ln in instance.lines])[:, None]
    for ci, c in enumerate(instance.contingencies):
        for lid, v in c.limit_overrides:
            lim[instance.line_index(lid), ci + 1] = v
    return lim


def _screen_block(conts, base_flows, sens, limits, periods, tol):
    out = []
    evaluations = 0
    for c in conts:
        if c < 0:
            flows = base_flows
            lim = limits[:, 0]
        else:
            k = sens.outaged[c]
            flows = base_flows + np.multiply.outer(sens.lodf[:, c], base_flows[k])
            flows[k] = 0.0
            lim = limits[:, c + 1]
        evaluations += flows.size
        excess = (np.abs(flows) - lim[:, None]) / lim[:, None]
        for l, ti in zip(*np.nonzero(excess > tol)):
            f = float(flows[l, ti])
            direction = "upper" if f > 0 else "lower"
            cid = None if c < 0 else sens.contingency_ids[c]
            t = periods[ti]
            out.append(Violation(
                SecurityCutId(sens.line_ids[l], t, cid, direction), f, float(lim[l]),
                float(excess[l, ti]), (t, c + 1, int(l), 0 if direction == "upper" else 1)))
    return out, evaluations


def screen(p, curtail, sens: SensitivitySet, instance: Instance, periods, workers: int = 1,
           tol: float = VIOLATION_TOL, stats: dict | None = None) -> list[Violation]:
    """All violated flow limits (base case and every contingency).

    ``p`` is (generator, period) and ``curtail`` (bus, period) over
    ``periods``.  The result is sorted by normalized excess (largest first),
    ties by (period, contingency, line, direction); it does not depend on
    ``workers``.
    """
    periods = list(periods)
    p = np.asarray(p, dtype=float).reshape(len(instance.generators), len(periods))
    curtail = np.asarray(curtail, dtype=float).reshape(instance.n_buses, len(periods))
    inj = np.zeros((instance.n_buses, len(periods)))
    np.add.at(inj, instance.gen_bus_indices(), p)
    inj += curtail - instance.demand[:, periods]
    imbalance = np.abs(inj.sum(axis=0))
    if np.any(imbalance > BALANCE_TOL):
        raise ScreeningError(f"assignment unbalanced by {float(imbalance.max()):.3g} MW")
    base = sens.ptdf_base @ inj
    limits = limit_table(instance)
    conts = list(range(-1, sens.n_contingencies))
    workers = max(1, int(workers))
    if workers == 1 or len(conts) == 1:
        results = [_screen_block(conts, base, sens, limits, periods, tol)]
    else:
        chunks = [conts[i::workers] for i in range(workers) if conts[i::workers]]
        with ThreadPoolExecutor(max_workers=len(chunks)) as ex:
            results = list(ex.map(lambda ch: _screen_block(ch, base, sens, limits, periods, tol), chunks))
    found = [v for vs, _ in results for v in vs]
    if stats is not None:
        stats["evaluations"] = stats.get("evaluations", 0) + sum(e for _, e in results)
    found.sort(key=lambda v: (-v.normalized_excess, v.order))
    return found


def select_cuts(violations: list[Violation], cap_per_period: int = CUT_CAP,
                pool: CutPool | set | None = None) -> list[Violation]:
    """Most violated new cuts, at most ``cap_per_period`` per period."""
    pool = pool if pool is not None else set()
    taken: dict[int, int] = {}
    chosen = []
    for v in violations:
        if v.id in pool:
            continue
        t = v.id.period
        if taken.get(t, 0) >= cap_per_period:
            continue
        taken[t] = taken.get(t, 0) + 1
        chosen.append(v)
    if not chosen and violations:
        v = violations[0]
        log.warning("all violated limits already pooled; re-emitting %s (excess %.3g)", v.id, v.normalized_excess)
        chosen = [v]
    return chosen


class _Extractor:
    def __init__(self, model: ModelSpec, instance: Instance):
        V = model.index
        per = list(model.periods)
        self.periods = per
        self.p_idx = np.array([[V["p", g.id, t] for t in per] for g in instance.generators], dtype=int).reshape(len(instance.generators), len(per))
        self.c_idx = np.array([[V["curtail", b, t] for t in per] for b in instance.buses], dtype=int).reshape(instance.n_buses, len(per))

    def __call__(self, values):
        return values[self.p_idx], values[self.c_idx]


def solve_with_dynamic_cuts(model: ModelSpec, sens: SensitivitySet, instance: Instance,
                            controls: SolveControls = SolveControls(), workers: int = 1,
                            cap_per_period: int = CUT_CAP, initial_solution=None) -> CutSolve:
    """Branch-and-bound with flow limits separated at integral points.

    Cut rows are appended to ``model.constraints`` as they are found.
    """
    t0 = time.perf_counter()
    pool = CutPool()
    extract = _Extractor(model, instance)
    counters: dict = {}

    def callback(values):
        p, cur = extract(values)
        viol = screen(p, cur, sens, instance, extract.periods, workers=workers, stats=counters)
        if not viol:
            return []
        rows = []
        for v in select_cuts(viol, cap_per_period, pool):
            if v.id not in pool:
                pool.add(v)
            rows.append(security_constraint(model, instance, sens, v.id))
        return rows

    outcome = solve_milp(model, controls, callback, initial_solution=initial_solution)
    return CutSolve(outcome, pool, 1, counters.get("evaluations", 0), time.perf_counter() - t0)


class FilteringLimitError(RuntimeError):
    def __init__(self, message, last: CutSolve):
        super().__init__(message)
        self.last = last


def solve_with_filtering(model: ModelSpec, sens: SensitivitySet, instance: Instance,
                         controls: SolveControls = SolveControls(), workers: int = 1,
                         cap_per_period: int = CUT_CAP, max_rounds: int = 50,
                         initial_solution=None) -> CutSolve:
    """Transmission filtering: re-solve from scratch until screening is clean."""
    t0 = time.perf_counter()
    pool = CutPool()
    extract = _Extractor(model, instance)
    counters: dict = {}
    rounds = 0
    outcome = None
    while True:
        rounds += 1
        remaining = controls.time_limit - (time.perf_counter() - t0)
        ctl = replace(controls, time_limit=max(remaining, 1e-3))
        outcome = solve_milp(model, ctl, None, initial_solution=initial_solution if rounds == 1 else None)
        if outcome.incumbent is None:
            break
        p, cur = extract(outcome.incumbent)
        viol = screen(p, cur, sens, instance, extract.periods, workers=workers, stats=counters)
        if not viol:
            break
        for v in select_cuts(viol, cap_per_period, pool):
            if v.id not in pool:
                pool.add(v)
            security_constraint(model, instance, sens, v.id)
        if outcome.status == Status.TIME_LIMIT or remaining <= 0:
            # the incumbent is known to be insecure
            outcome = SolveOutcome(Status.TIME_LIMIT, None, np.inf, outcome.best_bound, outcome.stats)
            break
        if rounds >= max_rounds:
            raise FilteringLimitError(
                f"transmission filtering did not converge in {max_rounds} rounds",
                CutSolve(outcome, pool, rounds, counters.get("evaluations", 0), time.perf_counter() - t0))
    return CutSolve(outcome, pool, rounds, counters.get("evaluations", 0), time.perf_counter() - t0)


def solve_enumerated(model: ModelSpec, sens: SensitivitySet, instance: Instance,
                     controls: SolveControls = SolveControls(), workers: int = 1,
                     initial_solution=None, **_) -> CutSolve:
    """Solve a model that already carries every flow-limit row."""
    t0 = time.perf_counter()
    outcome = solve_milp(model, controls, None, initial_solution=initial_solution)
    return CutSolve(outcome, CutPool(), 1, 0, time.perf_counter() - t0)


SEPARATIONS = {
    "dynamic": solve_with_dynamic_cuts,
    "filtering": solve_with_filtering,
    "enumerate": solve_enumerated,
}


def solve_scuc(instance: Instance, sens: SensitivitySet, separation: str = "dynamic",
               controls: SolveControls = SolveControls(), workers: int = 1, theta=None,
               start: int = 0, length: int | None = None, integer_prefix: int | None = None,
               fixed: dict | None = None, initial_solution=None) -> tuple[ModelSpec, CutSolve]:
    """Build the model for a period range and solve it with ``separation``.

    ``fixed`` maps variable names to values pinned through their bounds.
    """
    if separation not in SEPARATIONS:
        raise ValueError(f"unknown separation {separation!r}")
    mode = "enumerate" if separation == "enumerate" else "lazy"
    model = build_model(instance, theta, start, length, integer_prefix, mode, sens)
    for name, val in (fixed or {}).items():
        model.fix(name, val)
    return model, SEPARATIONS[separation](model, sens, instance, controls, workers=workers,
                                          initial_solution=initial_solution)
