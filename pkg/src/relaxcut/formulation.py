"""Solver-agnostic MILP models of the (partially relaxed) SCUC problem.

Periods are 0-based global indices.  A model covers ``length`` consecutive
periods starting at ``start``; the period ``start - 1`` is the boundary whose
commitment, remaining up/down time and output come from a
:class:`BoundaryState`.

Production cost uses the segment formulation
``p = P_min * x + sum_k seg_k`` with ``0 <= seg_k <= width_k * x``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .instance import Generator, Instance
from .schedule import Schedule, ScheduleError

__all__ = [
    "FormulationError",
    "VariableDef",
    "Constraint",
    "SecurityCutId",
    "ModelSpec",
    "BoundaryState",
    "FAMILIES",
    "build_model",
    "security_constraint",
    "production_cost",
    "segment_split",
    "objective_value",
    "objective_breakdown",
]

FAMILIES = ("initial_status", "logic", "min_updown", "init_power", "prod_limits", "ramp", "balance", "security")

BINARY, RELAXED, CONTINUOUS = "binary", "relaxed", "continuous"


class FormulationError(ValueError):
    pass


class VariableDef(NamedTuple):
    name: tuple
    domain: str
    lo: float
    hi: float


class SecurityCutId(NamedTuple):
    line: str
    period: int
    contingency: str | None  # None is the base case
    direction: str  # "upper" | "lower"


@dataclass(frozen=True)
class Constraint:
    tag: str
    name: tuple
    indices: np.ndarray
    coefs: np.ndarray
    sense: str  # "<=", "==", ">="
    rhs: float
    cut_id: SecurityCutId | None = None

    def activity(self, values: np.ndarray) -> float:
        return float(np.dot(self.coefs, values[self.indices]))

    def violation(self, values: np.ndarray) -> float:
        act = self.activity(values)
        if self.sense == "<=":
            return max(0.0, act - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - act)
        return abs(act - self.rhs)


def _fmt(name: tuple) -> str:
    kind, *rest = name
    return f"{kind}[{','.join(str(r) for r in rest)}]"


class ModelSpec:
    """Variables, linear rows and a linear objective.

    Bounds live in the ``lo``/``hi`` arrays so that callers can fix
    variables in place (see :meth:`fix`).
    """

    def __init__(self):
        self.names: list[tuple] = []
        self.domains: list[str] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._cost: list[float] = []
        self.index: dict[tuple, int] = {}
        self.constraints: list[Constraint] = []
        self.periods: range = range(0)
        self.security_mode = "lazy"
        self.lo = self.hi = self.c = None

    # -- construction
    def add_var(self, name: tuple, domain: str, lo: float, hi: float, cost: float = 0.0) -> int:
        if name in self.index:
            raise FormulationError(f"duplicate variable {_fmt(name)}")
        if domain in (BINARY, RELAXED) and (lo, hi) != (0.0, 1.0):
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        idx = len(self.names)
        self.index[name] = idx
        self.names.append(name)
        self.domains.append(domain)
        self._lo.append(lo)
        self._hi.append(hi)
        self._cost.append(cost)
        return idx

    def add(self, tag: str, name: tuple, terms: Iterable[tuple[int, float]], sense: str, rhs: float,
            cut_id: SecurityCutId | None = None) -> Constraint:
        idx, coef = [], []
        for i, a in terms:
            if a != 0.0:
                idx.append(i)
                coef.append(a)
        con = Constraint(tag, name, np.array(idx, dtype=np.int64), np.array(coef, dtype=float),
                         sense, float(rhs), cut_id)
        self.constraints.append(con)
        return con

    def finalize(self) -> "ModelSpec":
        self.lo = np.array(self._lo, dtype=float)
        self.hi = np.array(self._hi, dtype=float)
        self.c = np.array(self._cost, dtype=float)
        return self

    # -- queries
    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def variables(self) -> list[VariableDef]:
        return [VariableDef(n, d, float(l), float(h)) for n, d, l, h in zip(self.names, self.domains, self.lo, self.hi)]

    @property
    def integer_mask(self) -> np.ndarray:
        return np.array([d == BINARY for d in self.domains], dtype=bool)

    @property
    def tags(self) -> set[str]:
        return {c.tag for c in self.constraints}

    def var(self, *name) -> int:
        return self.index[tuple(name)]

    def objective(self, values: np.ndarray) -> float:
        return float(self.c @ values)

    def fix(self, name: tuple, value: float) -> None:
        i = self.index[name]
        self.lo[i] = self.hi[i] = value

    def relaxed(self) -> "ModelSpec":
        """Copy with every binary relaxed to [0, 1]."""
        m = ModelSpec()
        m.names, m.index, m.constraints = self.names, self.index, list(self.constraints)
        m.domains = [RELAXED if d == BINARY else d for d in self.domains]
        m.lo, m.hi, m.c = self.lo.copy(), self.hi.copy(), self.c.copy()
        m.periods, m.security_mode = self.periods, self.security_mode
        return m

    def max_violation(self, values: np.ndarray) -> float:
        v = max((c.violation(values) for c in self.constraints), default=0.0)
        v = max(v, float(np.max(self.lo - values, initial=0.0)), float(np.max(values - self.hi, initial=0.0)))
        return v

    def to_lp(self) -> str:
        """LP-style plain-text dump for debugging."""
        out = ["Minimize", " obj: " + " ".join(
            f"{c:+.12g} {_fmt(self.names[i])}" for i, c in enumerate(self.c) if c != 0.0) or " obj: 0", "Subject To"]
        op = {"<=": "<=", ">=": ">=", "==": "="}
        for con in self.constraints:
            lhs = " ".join(f"{a:+.12g} {_fmt(self.names[i])}" for i, a in zip(con.indices, con.coefs))
            out.append(f" {_fmt(con.name)}: {lhs or '0'} {op[con.sense]} {con.rhs:.12g}")
        out.append("Bounds")
        for n, l, h in zip(self.names, self.lo, self.hi):
            out.append(f" {l:.12g} <= {_fmt(n)} <= {h:.12g}")
        out.append("Binaries")
        out.extend(" " + _fmt(n) for n, d in zip(self.names, self.domains) if d == BINARY)
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class BoundaryState:
    """Per-generator state at the boundary period (arrays over generators)."""

    x0: np.ndarray  # 0/1
    up_remaining: np.ndarray  # periods
    down_remaining: np.ndarray
    p0: np.ndarray  # MW
    cum_up: np.ndarray  # consecutive on-periods ending at the boundary
    cum_down: np.ndarray

    @classmethod
    def from_instance(cls, instance: Instance) -> "BoundaryState":
        gens = instance.generators
        x0 = np.array([g.init_on for g in gens], dtype=int)
        up = np.array([g.init_min_up_remaining for g in gens], dtype=int)
        down = np.array([g.init_min_down_remaining for g in gens], dtype=int)
        ut = np.array([g.min_up for g in gens], dtype=int)
        dt = np.array([g.min_down for g in gens], dtype=int)
        # history consistent with the stated remaining times
        cum_up = np.where(x0 == 1, ut - up, 0)
        cum_down = np.where(x0 == 0, dt - down, 0)
        return cls(x0=x0, up_remaining=up, down_remaining=down,
                   p0=np.array([g.init_power for g in gens], dtype=float),
                   cum_up=np.maximum(cum_up, 0), cum_down=np.maximum(cum_down, 0))

    def check(self, n_gens: int) -> None:
        for name in ("x0", "up_remaining", "down_remaining", "p0", "cum_up", "cum_down"):
            if len(getattr(self, name)) != n_gens:
                raise FormulationError(f"boundary state {name} covers {len(getattr(self, name))} generators, instance has {n_gens}")
        if np.any((self.up_remaining > 0) & (self.x0 != 1)):
            raise FormulationError("boundary state: remaining up time on an offline unit")
        if np.any((self.down_remaining > 0) & (self.x0 != 0)):
            raise FormulationError("boundary state: remaining down time on an online unit")


def build_model(
    instance: Instance,
    theta: BoundaryState | None = None,
    start: int = 0,
    length: int | None = None,
    integer_prefix: int | None = None,
    security_mode: str = "lazy",
    sens=None,
) -> ModelSpec:
    """Build the SCUC model over periods ``[start, start + length)``.

    Commitment variables are binary over the first ``integer_prefix``
    periods and relaxed to [0, 1] afterwards.  Line-limit rows for the base
    case and every contingency are emitted only when
    ``security_mode == "enumerate"`` (which needs ``sens``).
    """
    T = instance.horizon
    if length is None:
        length = T - start
    if integer_prefix is None:
        integer_prefix = length
    if not (0 <= start and length >= 1 and start + length <= T):
        raise FormulationError(f"periods [{start}, {start + length}) outside horizon {T}")
    if not (1 <= integer_prefix <= length):
        raise FormulationError(f"integer prefix {integer_prefix} not in [1, {length}]")
    if security_mode not in ("lazy", "enumerate"):
        raise FormulationError(f"unknown security mode {security_mode!r}")
    if security_mode == "enumerate" and sens is None:
        raise FormulationError("enumerate mode needs a SensitivitySet")
    theta = BoundaryState.from_instance(instance) if theta is None else theta
    theta.check(len(instance.generators))

    m = ModelSpec()
    m.periods = range(start, start + length)
    m.security_mode = security_mode
    periods = m.periods
    last_int = start + integer_prefix

    for gi, g in enumerate(instance.generators):
        m.add_var(("p", g.id, start - 1), CONTINUOUS, float(theta.p0[gi]), float(theta.p0[gi]))
        for t in periods:
            dom = BINARY if t < last_int else RELAXED
            m.add_var(("x", g.id, t), dom, 0.0, 1.0, g.cost_noload + g.cost_at_min)
            m.add_var(("z", g.id, t), dom, 0.0, 1.0, g.cost_startup)
            m.add_var(("w", g.id, t), dom, 0.0, 1.0)
            m.add_var(("p", g.id, t), CONTINUOUS, 0.0, g.p_max)
            for k, (width, cost) in enumerate(g.cost_segments):
                m.add_var(("segment", g.id, t, k), CONTINUOUS, 0.0, width, cost)
    for bi, b in enumerate(instance.buses):
        for t in periods:
            m.add_var(("curtail", b, t), CONTINUOUS, 0.0, float(instance.demand[bi, t]), instance.curtail_penalty)

    V = m.index
    for gi, g in enumerate(instance.generators):
        gid = g.id
        x0 = int(theta.x0[gi])
        # initial status
        if x0 == 1 and theta.up_remaining[gi] > 0:
            for t in range(start, min(start + int(theta.up_remaining[gi]), start + length)):
                m.add("initial_status", ("init_on", gid, t), [(V["x", gid, t], 1.0)], "==", 1.0)
        if x0 == 0 and theta.down_remaining[gi] > 0:
            for t in range(start, min(start + int(theta.down_remaining[gi]), start + length)):
                m.add("initial_status", ("init_off", gid, t), [(V["x", gid, t], 1.0)], "==", 0.0)
        # initial production
        m.add("init_power", ("init_power", gid), [(V["p", gid, start - 1], 1.0)], "==", float(theta.p0[gi]))
        for t in periods:
            x, z, w, p = V["x", gid, t], V["z", gid, t], V["w", gid, t], V["p", gid, t]
            p_prev = V["p", gid, t - 1]
            # logic
            if t == start:
                m.add("logic", ("logic", gid, t), [(x, 1.0), (z, -1.0), (w, 1.0)], "==", float(x0))
            else:
                m.add("logic", ("logic", gid, t), [(x, 1.0), (V["x", gid, t - 1], -1.0), (z, -1.0), (w, 1.0)], "==", 0.0)
            m.add("logic", ("startstop", gid, t), [(z, 1.0), (w, 1.0)], "<=", 1.0)
            # minimum up / down
            ups = [(V["z", gid, tau], 1.0) for tau in range(max(start, t - g.min_up + 1), t + 1)]
            m.add("min_updown", ("min_up", gid, t), ups + [(x, -1.0)], "<=", 0.0)
            downs = [(V["w", gid, tau], 1.0) for tau in range(max(start, t - g.min_down + 1), t + 1)]
            m.add("min_updown", ("min_down", gid, t), downs + [(x, 1.0)], "<=", 1.0)
            # production limits and segment link
            segs = [V["segment", gid, t, k] for k in range(len(g.cost_segments))]
            m.add("prod_limits", ("p_link", gid, t), [(p, 1.0), (x, -g.p_min)] + [(s, -1.0) for s in segs], "==", 0.0)
            for k, s in enumerate(segs):
                m.add("prod_limits", ("seg_ub", gid, t, k), [(s, 1.0), (x, -g.cost_segments[k][0])], "<=", 0.0)
            m.add("prod_limits", ("p_min", gid, t), [(p, 1.0), (x, -g.p_min)], ">=", 0.0)
            m.add("prod_limits", ("p_max", gid, t), [(p, 1.0), (x, -g.p_max)], "<=", 0.0)
            # ramping
            if t == start:
                m.add("ramp", ("ramp_up", gid, t), [(p, 1.0), (p_prev, -1.0), (z, -g.startup_cap)], "<=", g.ramp_up * x0)
            else:
                m.add("ramp", ("ramp_up", gid, t),
                      [(p, 1.0), (p_prev, -1.0), (V["x", gid, t - 1], -g.ramp_up), (z, -g.startup_cap)], "<=", 0.0)
            m.add("ramp", ("ramp_down", gid, t), [(p_prev, 1.0), (p, -1.0), (x, -g.ramp_down), (w, -g.shutdown_cap)], "<=", 0.0)

    for t in periods:
        terms = [(V["p", g.id, t], 1.0) for g in instance.generators]
        terms += [(V["curtail", b, t], 1.0) for b in instance.buses]
        m.add("balance", ("balance", t), terms, "==", float(instance.demand[:, t].sum()))

    m.finalize()
    if security_mode == "enumerate":
        n_c = len(instance.contingencies)
        for t in periods:
            for c in [None] + list(range(n_c)):
                cid = None if c is None else instance.contingencies[c].id
                for l, ln in enumerate(instance.lines):
                    if c is not None and sens.outaged[c] == l:
                        continue
                    for direction in ("upper", "lower"):
                        security_constraint(m, instance, sens, SecurityCutId(ln.id, t, cid, direction))
    return m


def security_constraint(model: ModelSpec, instance: Instance, sens, cut: SecurityCutId) -> Constraint:
    """Append (and return) the flow-limit row identified by ``cut``."""
    l = sens.line_index(cut.line)
    c = sens.cont_index(cut.contingency)
    row = sens.row(l, c)
    t = cut.period
    limit = instance.contingency_limit(l, c)
    V = model.index
    terms = [(V["p", g.id, t], float(row[instance.bus_index(g.bus)])) for g in instance.generators]
    terms += [(V["curtail", b, t], float(row[bi])) for bi, b in enumerate(instance.buses)]
    terms = [(i, a) for i, a in terms if abs(a) > 1e-12]
    load_flow = float(row @ instance.demand[:, t])
    tag_name = "flow_ub" if cut.direction == "upper" else "flow_lb"
    name = (tag_name, cut.line, t, "base" if cut.contingency is None else cut.contingency)
    if cut.direction == "upper":
        return model.add("security", name, terms, "<=", limit + load_flow, cut)
    return model.add("security", name, terms, ">=", -limit + load_flow, cut)


# -- cost evaluation ---------------------------------------------------------

_BOUND_TOL = 1e-6


def segment_split(gen: Generator, power: float) -> list[float]:
    """Greedy fill of the cost segments above ``p_min``."""
    rest = max(0.0, power - gen.p_min)
    out = []
    for width, _ in gen.cost_segments:
        take = min(width, rest)
        out.append(take)
        rest -= take
    return out


def production_cost(gen: Generator, commit: int, power: float) -> float:
    """C^P for one generator-period; excludes start-up and no-load costs."""
    scale = max(1.0, gen.p_max)
    if not commit:
        if abs(power) > _BOUND_TOL * scale:
            raise FormulationError(f"generator {gen.id}: output {power} MW while decommitted")
        return 0.0
    if power < gen.p_min - _BOUND_TOL * scale or power > gen.p_max + _BOUND_TOL * scale:
        raise FormulationError(f"generator {gen.id}: output {power} MW outside [{gen.p_min}, {gen.p_max}]")
    split = segment_split(gen, min(max(power, gen.p_min), gen.p_max))
    return gen.cost_at_min + sum(m * s for (_, m), s in zip(gen.cost_segments, split))


def objective_breakdown(instance: Instance, schedule: Schedule) -> dict[str, float]:
    schedule.check_dimensions(instance)
    x = np.rint(schedule.x).astype(int)
    z = schedule.z if schedule.z is not None else Schedule.from_commitment(instance, x, schedule.p, schedule.curtail).z
    prod = su = nl = 0.0
    for gi, g in enumerate(instance.generators):
        for t in range(instance.horizon):
            prod += production_cost(g, x[gi, t], float(schedule.p[gi, t]))
        su += g.cost_startup * float(z[gi].sum())
        nl += g.cost_noload * float(x[gi].sum())
    cur = instance.curtail_penalty * float(schedule.curtail.sum())
    return {"production": prod, "startup": su, "noload": nl, "curtailment": cur,
            "total": prod + su + nl + cur}


def objective_value(instance: Instance, schedule: Schedule) -> float:
    try:
        return objective_breakdown(instance, schedule)["total"]
    except ScheduleError as exc:
        raise FormulationError(str(exc)) from exc


def schedule_from_values(instance: Instance, model: ModelSpec, values: np.ndarray,
                         periods: Sequence[int] | None = None) -> dict[str, np.ndarray]:
    """Extract x/p/curtail arrays over ``periods`` from a model solution."""
    periods = list(model.periods if periods is None else periods)
    V = model.index
    x = np.array([[values[V["x", g.id, t]] for t in periods] for g in instance.generators]).reshape(len(instance.generators), len(periods))
    p = np.array([[values[V["p", g.id, t]] for t in periods] for g in instance.generators]).reshape(len(instance.generators), len(periods))
    cur = np.array([[values[V["curtail", b, t]] for t in periods] for b in instance.buses]).reshape(instance.n_buses, len(periods))
    return {"x": x, "p": p, "curtail": cur}
