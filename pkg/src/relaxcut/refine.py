"""Sliding-window neighbourhood search (RINS-style refinement).

Commitments and outputs outside the current window are pinned to the
incumbent; inside the window the full model (with lazy security cuts) is
re-optimized.  A window result replaces the incumbent only if it is strictly
cheaper and passes the feasibility check.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .formulation import ModelSpec, build_model, objective_value, schedule_from_values, segment_split
from .instance import Instance
from .milp import SolveControls
from .network import SensitivitySet
from .schedule import Schedule
from .separation import solve_scuc
from .validate import check_schedule

__all__ = ["RefineReport", "window_starts", "rins_refine", "incumbent_vector"]

log = logging.getLogger(__name__)

IMPROVE_TOL = 1e-9  # relative; smaller changes count as plateau moves


@dataclass
class RefineStep:
    pass_no: int
    start: int
    stop: int
    candidate: float
    accepted: bool
    objective: float  # incumbent after the step
    wall_time: float


@dataclass
class RefineReport:
    initial_objective: float
    steps: list[RefineStep] = field(default_factory=list)
    passes: int = 0
    truncated: bool = False
    wall_time: float = 0.0

    @property
    def final_objective(self) -> float:
        return self.steps[-1].objective if self.steps else self.initial_objective

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["pass", "window_start", "window_end", "candidate", "accepted", "objective", "wall_seconds"])
            for s in self.steps:
                wr.writerow([s.pass_no, s.start + 1, s.stop, f"{s.candidate:.6f}", int(s.accepted),
                             f"{s.objective:.6f}", f"{s.wall_time:.3f}"])


def window_starts(T: int, window: int = 12, stride: int = 9) -> list[int]:
    """Window start periods (0-based); the last window reaches the horizon end."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    starts = [0]
    while starts[-1] + window < T:
        starts.append(starts[-1] + stride)
    return starts


def incumbent_vector(model: ModelSpec, instance: Instance, sched: Schedule) -> np.ndarray:
    """Model-space vector reproducing ``sched`` over ``model.periods``."""
    V = model.index
    vals = np.clip(np.zeros(model.n_vars), model.lo, model.hi)
    z, w = sched.z, sched.w
    for gi, g in enumerate(instance.generators):
        for t in model.periods:
            vals[V["x", g.id, t]] = sched.x[gi, t]
            vals[V["z", g.id, t]] = z[gi, t]
            vals[V["w", g.id, t]] = w[gi, t]
            vals[V["p", g.id, t]] = sched.p[gi, t]
            if sched.x[gi, t]:
                for k, s in enumerate(segment_split(g, float(sched.p[gi, t]))):
                    vals[V["segment", g.id, t, k]] = s
    for bi, b in enumerate(instance.buses):
        for t in model.periods:
            vals[V["curtail", b, t]] = sched.curtail[bi, t]
    return vals


def _pins(instance: Instance, sched: Schedule, inside: range) -> dict:
    fixed = {}
    for gi, g in enumerate(instance.generators):
        for t in range(instance.horizon):
            if t in inside:
                continue
            on = int(sched.x[gi, t])
            fixed["x", g.id, t] = on
            fixed["z", g.id, t] = int(sched.z[gi, t])
            fixed["w", g.id, t] = int(sched.w[gi, t])
            fixed["p", g.id, t] = float(np.clip(sched.p[gi, t], g.p_min * on, g.p_max * on))
    return fixed


def rins_refine(instance: Instance, sens: SensitivitySet, incumbent: Schedule, window: int = 12,
                stride: int = 9, controls: SolveControls = SolveControls(mip_gap=1e-3, time_limit=600.0),
                separation: str = "dynamic", workers: int = 1, min_pass_improvement: float = 1e-4,
                max_passes: int | None = None) -> tuple[Schedule, RefineReport]:
    """Improve ``incumbent`` window by window until a pass gains < ``min_pass_improvement``.

    ``controls.time_limit`` is the budget for the whole refinement.
    """
    T = instance.horizon
    t0 = time.perf_counter()
    best = incumbent.copy()
    if best.z is None or best.w is None:
        best = Schedule.from_commitment(instance, best.x, best.p, best.curtail, best.provenance)
    best_obj = objective_value(instance, best)
    best.objective = best_obj
    report = RefineReport(initial_objective=best_obj)
    starts = window_starts(T, window, stride)
    layout = build_model(instance, None, 0, T, None, "lazy", sens)  # same variable order as each window model
    pass_no = 0
    while max_passes is None or pass_no < max_passes:
        pass_no += 1
        pass_start_obj = best_obj
        for s in starts:
            left = controls.time_limit - (time.perf_counter() - t0)
            if left <= 0:
                report.truncated = True
                break
            inside = range(s, min(s + window, T))
            ts = time.perf_counter()
            pins = _pins(instance, best, inside)
            seed = incumbent_vector(layout, instance, best)
            model, res = solve_scuc(instance, sens, separation, replace(controls, time_limit=left), workers,
                                    fixed=pins, initial_solution=seed)
            out = res.outcome
            cand = np.inf
            accepted = False
            if out.incumbent is not None:
                vals = schedule_from_values(instance, model, out.incumbent)
                sched = Schedule.from_commitment(instance, vals["x"], vals["p"], vals["curtail"], best.provenance)
                cand = objective_value(instance, sched)
                if cand < best_obj - IMPROVE_TOL * max(1.0, abs(best_obj)):
                    if check_schedule(instance, sens, sched).feasible:
                        sched.provenance = [
                            f"rins-pass-{pass_no}" if t in inside and (
                                np.any(sched.x[:, t] != best.x[:, t])
                                or np.any(np.abs(sched.p[:, t] - best.p[:, t]) > 1e-6)) else best.provenance[t]
                            for t in range(T)
                        ] if best.provenance else []
                        sched.objective = cand
                        best, best_obj, accepted = sched, cand, True
                    else:
                        log.warning("window %d..%d candidate failed validation; kept incumbent", s + 1, inside.stop)
            step = RefineStep(pass_no, s, inside.stop, cand, accepted, best_obj, time.perf_counter() - ts)
            report.steps.append(step)
            log.info("pass=%d window=%d..%d candidate=%.6f accepted=%d objective=%.6f",
                     pass_no, s + 1, inside.stop, cand, int(accepted), best_obj)
            if out.status.value == "feasible-time-limit":
                report.truncated = True
                break
        report.passes = pass_no
        if report.truncated:
            break
        gain = (pass_start_obj - best_obj) / max(1.0, abs(pass_start_obj))
        if gain < min_pass_improvement:
            break
    report.wall_time = time.perf_counter() - t0
    return best, report
