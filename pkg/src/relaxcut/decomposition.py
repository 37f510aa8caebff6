"""Partially relaxed temporal decomposition (relax-and-cut).

The horizon is split into a fixed prefix, an integer window of ``s_I``
periods, a relaxed look-ahead window of ``s_R`` periods and the deferred
rest.  Each subproblem commits the first ``dt`` periods of its integer
window, the boundary state is propagated, and the windows advance.  After
the last window a completion problem covers every uncommitted period with
full integrality.  An infeasible subproblem restarts the whole pass with an
integer window enlarged by ``ds``.
"""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .formulation import BoundaryState, objective_value, schedule_from_values
from .instance import Instance
from .milp import SolveControls, Status
from .network import SensitivitySet
from .schedule import Schedule
from .separation import solve_scuc

__all__ = [
    "WindowPartition",
    "DecompositionInfeasible",
    "DecompositionReport",
    "boundary_update",
    "propagate_state",
    "run_relax_and_cut",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowPartition:
    s_F: int
    s_I: int
    s_R: int
    dt: int
    T: int

    def __post_init__(self):
        if self.dt < 1 or self.s_I < 1 or self.s_R < 0:
            raise ValueError("window sizes need dt >= 1, s_I >= 1, s_R >= 0")

    @classmethod
    def initial(cls, s_I: int, s_R: int, dt: int, T: int) -> "WindowPartition":
        return cls(-dt, s_I, s_R, dt, T)

    # 0-based half-open period ranges
    @property
    def w_F(self) -> range:
        return range(0, max(self.s_F, 0))

    @property
    def w_I(self) -> range:
        return range(self.s_F, self.s_F + self.s_I)

    @property
    def w_R(self) -> range:
        return range(self.s_F + self.s_I, self.s_F + self.s_I + self.s_R)

    @property
    def forms_subproblem(self) -> bool:
        return self.s_F >= 0 and self.s_F + self.s_I + self.s_R <= self.T

    def advance(self) -> "WindowPartition":
        return replace(self, s_F=self.s_F + self.dt)


def boundary_update(x_end: int, p_end: float, min_up: int, min_down: int,
                      up_run: int, down_run: int) -> tuple[int, int, int, float]:
    """Next boundary (x0, up remaining, down remaining, p0) for one unit."""
    up_rem = down_rem = 0
    if x_end == 1:
        up_rem = max(0, min_up - up_run)
    else:
        down_rem = max(0, min_down - down_run)
    return x_end, up_rem, down_rem, p_end


def _trailing_run(row: np.ndarray) -> int:
    last = row[-1]
    n = 0
    for v in row[::-1]:
        if v != last:
            break
        n += 1
    return n


def propagate_state(prev: BoundaryState, x_window, p_window, instance: Instance) -> BoundaryState:
    """Boundary state after committing ``x_window``/``p_window`` (gen, dt).

    Consecutive on/off durations are counted across earlier boundaries
    when a unit keeps one state through the whole window.
    """
    x_window = np.asarray(x_window, dtype=float)
    if x_window.ndim != 2 or x_window.shape[1] < 1:
        raise ValueError("window solution must be (generator, dt) with dt >= 1")
    if np.any(np.abs(x_window - np.rint(x_window)) > 1e-6):
        raise ValueError("fractional commitment in the committed window")
    xw = np.rint(x_window).astype(int)
    pw = np.asarray(p_window, dtype=float)
    n = xw.shape[0]
    out = {k: np.zeros(n, dtype=int) for k in ("x0", "up", "down", "cum_up", "cum_down")}
    p0 = np.zeros(n)
    dt = xw.shape[1]
    for gi, g in enumerate(instance.generators):
        row = xw[gi]
        run = _trailing_run(row)
        x_end = int(row[-1])
        if run == dt and int(prev.x0[gi]) == x_end:
            run += int(prev.cum_up[gi] if x_end == 1 else prev.cum_down[gi])
        up_run = run if x_end == 1 else 0
        down_run = run if x_end == 0 else 0
        x0, up, down, p_end = boundary_update(x_end, float(pw[gi, -1]), g.min_up, g.min_down, up_run, down_run)
        out["x0"][gi], out["up"][gi], out["down"][gi] = x0, up, down
        out["cum_up"][gi], out["cum_down"][gi] = up_run, down_run
        p0[gi] = p_end if x_end == 1 else 0.0
    return BoundaryState(x0=out["x0"], up_remaining=out["up"], down_remaining=out["down"], p0=p0,
                         cum_up=out["cum_up"], cum_down=out["cum_down"])


class DecompositionInfeasible(RuntimeError):
    def __init__(self, message: str, report: "DecompositionReport", timed_out: bool = False):
        super().__init__(message)
        self.report = report
        self.timed_out = timed_out


@dataclass
class SubproblemRecord:
    iteration: int
    kind: str  # "window" | "completion"
    w_I: tuple[int, int]
    w_R: tuple[int, int]
    status: str
    objective: float
    cuts: int
    rounds: int
    wall_time: float

    def log_line(self) -> str:
        return (f"iteration={self.iteration} kind={self.kind} w_I={_span(self.w_I)} "
                f"w_R={_span(self.w_R)} status={self.status} objective={self.objective:.6f} "
                f"cuts={self.cuts} rounds={self.rounds} wall={self.wall_time:.3f}")


def _span(r: tuple[int, int]) -> str:
    return f"{r[0] + 1}..{r[1]}" if r[1] > r[0] else "none"


@dataclass
class DecompositionReport:
    subproblems: list[SubproblemRecord] = field(default_factory=list)
    restarts: list[int] = field(default_factory=list)  # s_I used after each restart
    final_s_I: int = 0
    prefix_hashes: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def cuts(self) -> int:
        return sum(r.cuts for r in self.subproblems)


def _prefix_hash(x, p) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x, dtype=np.int8).tobytes())
    h.update(np.ascontiguousarray(p, dtype=float).tobytes())
    return h.hexdigest()


def run_relax_and_cut(instance: Instance, sens: SensitivitySet, s_I: int = 6, s_R: int = 6, dt: int = 6,
                      ds: int = 2, controls: SolveControls = SolveControls(mip_gap=0.01),
                      separation: str = "dynamic", workers: int = 1,
                      completion_controls: SolveControls | None = None) -> tuple[Schedule, DecompositionReport]:
    """Relax-and-cut over the whole horizon; ``s_R = 0`` gives plain TD."""
    T = instance.horizon
    if min(s_I, dt, ds) < 1 or s_R < 0:
        raise ValueError("s_I, dt, ds must be positive and s_R non-negative")
    if dt > s_I:
        raise ValueError("advance step dt cannot exceed the integer window s_I")
    completion_controls = completion_controls or controls
    t_start = time.perf_counter()
    report = DecompositionReport()
    cur_s_I = min(s_I, T)
    iteration = 0

    def remaining(ctl: SolveControls) -> SolveControls:
        left = controls.time_limit - (time.perf_counter() - t_start)
        return replace(ctl, time_limit=max(min(ctl.time_limit, left), 1e-3))

    while True:
        theta = BoundaryState.from_instance(instance)
        xs, ps, cs, prov = [], [], [], []
        committed = 0
        failed = False
        part = WindowPartition.initial(cur_s_I, s_R, dt, T)
        while True:
            nxt = part.advance()
            if not nxt.forms_subproblem:
                break
            part = nxt
            iteration += 1
            start, length = part.s_F, cur_s_I + s_R
            model, res = solve_scuc(instance, sens, separation, remaining(controls), workers, theta=theta,
                                    start=start, length=length, integer_prefix=cur_s_I)
            out = res.outcome
            rec = SubproblemRecord(iteration, "window", (part.w_I.start, part.w_I.stop),
                                   (part.w_R.start, part.w_R.stop), out.status.value,
                                   out.objective, len(res.pool), res.rounds, res.wall_time)
            report.subproblems.append(rec)
            log.info(rec.log_line())
            if out.incumbent is None:
                failed = True
                break
            # the final integer window may already reach the horizon end
            n_commit = cur_s_I if start + cur_s_I == T else dt
            periods = range(start, start + n_commit)
            vals = schedule_from_values(instance, model, out.incumbent, periods)
            xs.append(np.rint(vals["x"]))
            ps.append(vals["p"])
            cs.append(vals["curtail"])
            prov += [f"fixed-at-iteration-{iteration}"] * n_commit
            theta = propagate_state(theta, vals["x"], vals["p"], instance)
            committed = start + n_commit
            report.prefix_hashes.append(_prefix_hash(np.hstack(xs), np.hstack(ps)))

        if not failed and committed < T:
            iteration += 1
            model, res = solve_scuc(instance, sens, separation, remaining(completion_controls), workers,
                                    theta=theta, start=committed, length=T - committed)
            out = res.outcome
            rec = SubproblemRecord(iteration, "completion", (committed, T), (T, T), out.status.value,
                                   out.objective, len(res.pool), res.rounds, res.wall_time)
            report.subproblems.append(rec)
            log.info(rec.log_line())
            if out.incumbent is None:
                failed = True
            else:
                vals = schedule_from_values(instance, model, out.incumbent, range(committed, T))
                xs.append(np.rint(vals["x"]))
                ps.append(vals["p"])
                cs.append(vals["curtail"])
                prov += ["final-completion"] * (T - committed)

        if not failed:
            sched = Schedule.from_commitment(instance, np.hstack(xs), np.hstack(ps), np.hstack(cs), prov)
            sched.objective = objective_value(instance, sched)
            report.final_s_I = cur_s_I
            report.wall_time = time.perf_counter() - t_start
            return sched, report

        timed_out = out.status == Status.TIME_LIMIT
        if cur_s_I >= T or timed_out:
            report.final_s_I = cur_s_I
            report.wall_time = time.perf_counter() - t_start
            why = "time limit reached without a feasible subproblem solution" if timed_out else \
                "instance infeasible even with the integer window covering the horizon"
            raise DecompositionInfeasible(f"{why} (last: {report.subproblems[-1].log_line()})", report, timed_out)
        cur_s_I = min(cur_s_I + ds, T)
        report.restarts.append(cur_s_I)
        log.info("restart=%d s_I=%d reason=infeasible-subproblem", len(report.restarts), cur_s_I)

