"""Full-constraint feasibility check for schedules.

Everything is recomputed from the instance data and the schedule arrays;
line flows use the sensitivity matrices directly and every security row
(base case and each contingency, both directions) is enumerated.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .instance import Instance
from .network import SensitivitySet
from .schedule import Schedule, startup_shutdown

__all__ = ["Tolerances", "ValidationReport", "ValidationError", "check_schedule", "gap_report", "FAMILIES"]

FAMILIES = ("binary", "initial_status", "logic", "min_updown", "prod_limits", "ramp", "balance",
            "curtail_bounds", "security")


class ValidationError(ValueError):
    """Schedule and instance dimensions disagree."""


@dataclass(frozen=True)
class Tolerances:
    binary: float = 1e-6
    logic: float = 1e-6  # logic and minimum up/down residuals
    mw: float = 1e-4  # balance, ramp, production limits
    flow_rel: float = 1e-4  # relative to the line limit


@dataclass
class ViolationRecord:
    family: str
    location: dict
    magnitude: float


@dataclass
class ValidationReport:
    violations: list[ViolationRecord] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def families(self) -> set[str]:
        return {v.family for v in self.violations}

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "violation_count": len(self.violations),
                "violations": [asdict(v) for v in self.violations]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _shape_check(instance: Instance, s: Schedule) -> None:
    G, T, B = len(instance.generators), instance.horizon, instance.n_buses
    expect = {"x": (G, T), "p": (G, T), "curtail": (B, T), "z": (G, T), "w": (G, T)}
    for name, shape in expect.items():
        arr = getattr(s, name)
        if arr is None:
            continue
        if np.shape(arr) != shape:
            raise ValidationError(f"schedule {name} has shape {np.shape(arr)}, instance needs {shape}")


def check_schedule(instance: Instance, sens: SensitivitySet, schedule: Schedule,
                   tol: Tolerances = Tolerances()) -> ValidationReport:
    """Every violated constraint of the full SCUC model, tagged by family."""
    _shape_check(instance, schedule)
    rep = ValidationReport()

    def add(family, magnitude, **loc):
        rep.violations.append(ViolationRecord(family, loc, float(magnitude)))

    gens = instance.generators
    T = instance.horizon
    x_raw = np.asarray(schedule.x, dtype=float)
    p = np.asarray(schedule.p, dtype=float)
    cur = np.asarray(schedule.curtail, dtype=float)

    for gi, t in zip(*np.nonzero(np.abs(x_raw - np.rint(x_raw)) > tol.binary)):
        add("binary", abs(x_raw[gi, t] - np.rint(x_raw[gi, t])), generator=gens[gi].id, period=int(t) + 1, variable="x")
    x = np.clip(np.rint(x_raw), 0, 1).astype(int)
    x0 = np.array([g.init_on for g in gens], dtype=int)
    if schedule.z is None or schedule.w is None:
        z, w = startup_shutdown(x, x0)
        z, w = z.astype(float), w.astype(float)
    else:
        z, w = np.asarray(schedule.z, dtype=float), np.asarray(schedule.w, dtype=float)
        for name, arr in (("z", z), ("w", w)):
            for gi, t in zip(*np.nonzero(np.abs(arr - np.rint(arr)) > tol.binary)):
                add("binary", abs(arr[gi, t] - np.rint(arr[gi, t])), generator=gens[gi].id, period=int(t) + 1, variable=name)

    for gi, g in enumerate(gens):
        loc = {"generator": g.id}
        # initial status
        if g.init_on:
            for t in range(min(g.init_min_up_remaining, T)):
                if x[gi, t] != 1:
                    add("initial_status", 1.0, period=t + 1, **loc)
        else:
            for t in range(min(g.init_min_down_remaining, T)):
                if x[gi, t] != 0:
                    add("initial_status", 1.0, period=t + 1, **loc)
        prev_x = np.concatenate([[g.init_on], x_raw[gi, :-1]])
        p_prev = np.concatenate([[g.init_power], p[gi, :-1]])
        for t in range(T):
            r = x_raw[gi, t] - prev_x[t] - z[gi, t] + w[gi, t]
            if abs(r) > tol.logic:
                add("logic", abs(r), period=t + 1, **loc)
            if z[gi, t] + w[gi, t] - 1.0 > tol.logic:
                add("logic", z[gi, t] + w[gi, t] - 1.0, period=t + 1, **loc)
            up = z[gi, max(0, t - g.min_up + 1):t + 1].sum() - x_raw[gi, t]
            if up > tol.logic:
                add("min_updown", up, period=t + 1, kind="up", **loc)
            down = w[gi, max(0, t - g.min_down + 1):t + 1].sum() - (1.0 - x_raw[gi, t])
            if down > tol.logic:
                add("min_updown", down, period=t + 1, kind="down", **loc)
            lo = p[gi, t] - g.p_min * x_raw[gi, t]
            hi = p[gi, t] - g.p_max * x_raw[gi, t]
            if lo < -tol.mw:
                add("prod_limits", -lo, period=t + 1, kind="min", **loc)
            if hi > tol.mw:
                add("prod_limits", hi, period=t + 1, kind="max", **loc)
            ru = p[gi, t] - p_prev[t] - g.ramp_up * prev_x[t] - g.startup_cap * z[gi, t]
            if ru > tol.mw:
                add("ramp", ru, period=t + 1, kind="up", **loc)
            rd = p_prev[t] - p[gi, t] - g.ramp_down * x_raw[gi, t] - g.shutdown_cap * w[gi, t]
            if rd > tol.mw:
                add("ramp", rd, period=t + 1, kind="down", **loc)

    demand = np.asarray(instance.demand, dtype=float)
    for bi, t in zip(*np.nonzero((cur < -tol.mw) | (cur - demand > tol.mw))):
        mag = -cur[bi, t] if cur[bi, t] < 0 else cur[bi, t] - demand[bi, t]
        add("curtail_bounds", mag, bus=instance.buses[bi], period=int(t) + 1)
    mismatch = p.sum(axis=0) + cur.sum(axis=0) - demand.sum(axis=0)
    for t in np.flatnonzero(np.abs(mismatch) > tol.mw):
        add("balance", abs(mismatch[t]), period=int(t) + 1)

    # security: all rows, flows straight from the sensitivities
    inj = np.zeros_like(demand)
    np.add.at(inj, instance.gen_bus_indices(), p)
    inj += cur - demand
    base = sens.ptdf_base @ inj
    for ci in range(-1, sens.n_contingencies):
        if ci < 0:
            flows = base
            lim = np.array([ln.limit_base for ln in instance.lines])
            cname = None
        else:
            k = sens.outaged[ci]
            flows = base + np.multiply.outer(sens.lodf[:, ci], base[k])
            flows[k] = 0.0
            lim = np.array([instance.contingency_limit(l, ci) for l in range(len(instance.lines))])
            cname = sens.contingency_ids[ci]
        excess = np.abs(flows) - lim[:, None]
        for l, t in zip(*np.nonzero(excess > tol.flow_rel * lim[:, None])):
            add("security", excess[l, t], line=instance.lines[l].id, period=int(t) + 1,
                contingency=cname, flow=float(flows[l, t]), limit=float(lim[l]))
    return rep


def gap_report(objective: float, reference: float) -> float:
    """Relative gap of ``objective`` against a positive ``reference``."""
    if not reference > 0:
        raise ValueError(f"reference objective must be positive, got {reference}")
    return (objective - reference) / reference
