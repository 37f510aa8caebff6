"""Problem data model for security-constrained unit commitment.

An :class:`Instance` bundles the network (buses, lines), the generator fleet,
the N-1 line-outage contingency list and the demand time series.  Instances
are immutable; the numpy arrays they hold are flagged read-only.

Instance files are UTF-8 JSON documents with the top-level keys ``meta``,
``buses``, ``lines``, ``generators``, ``contingencies``, ``demand`` and
``curtail_penalty``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

__all__ = [
    "InstanceError",
    "Generator",
    "Line",
    "Contingency",
    "Instance",
    "parse_instance",
    "load_instance",
    "serialize_instance",
    "dump_instance",
    "generators_at_bus",
]


class InstanceError(ValueError):
    """Raised for malformed or inconsistent instance documents.

    ``field`` names the offending document field and ``invariant`` the short
    key of the violated rule (``None`` for syntax and lookup errors).
    """

    def __init__(self, message: str, field: str | None = None, invariant: str | None = None):
        super().__init__(message)
        self.field = field
        self.invariant = invariant


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_min: float
    p_max: float
    startup_cap: float
    shutdown_cap: float
    ramp_up: float
    ramp_down: float
    min_up: int
    min_down: int
    cost_startup: float
    cost_noload: float
    cost_segments: tuple[tuple[float, float], ...]
    init_on: bool
    init_min_up_remaining: int = 0
    init_min_down_remaining: int = 0
    init_power: float = 0.0
    # $/period at p_min while committed; kept apart from the no-load cost
    cost_at_min: float = 0.0


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float
    limit_base: float
    limit_contingency: float


@dataclass(frozen=True)
class Contingency:
    id: str
    outaged_line: str
    # per-line emergency limits for this outage only
    limit_overrides: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    buses: tuple[str, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    contingencies: tuple[Contingency, ...]
    demand: np.ndarray  # (bus, period) MW
    curtail_penalty: float
    _bus_index: dict = field(default_factory=dict, repr=False)
    _line_index: dict = field(default_factory=dict, repr=False)
    _gen_index: dict = field(default_factory=dict, repr=False)
    _gens_by_bus: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.demand.setflags(write=False)
        self._bus_index.update({b: i for i, b in enumerate(self.buses)})
        self._line_index.update({ln.id: i for i, ln in enumerate(self.lines)})
        self._gen_index.update({g.id: i for i, g in enumerate(self.generators)})
        by_bus: dict[str, list[str]] = {b: [] for b in self.buses}
        for g in self.generators:
            by_bus[g.bus].append(g.id)
        self._gens_by_bus.update({b: tuple(sorted(ids)) for b, ids in by_bus.items()})

    @property
    def horizon(self) -> int:
        return self.demand.shape[1]

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def bus_index(self, bus: str) -> int:
        try:
            return self._bus_index[bus]
        except KeyError:
            raise InstanceError(f"unknown bus {bus!r}", field="bus") from None

    def line_index(self, line: str) -> int:
        try:
            return self._line_index[line]
        except KeyError:
            raise InstanceError(f"unknown line {line!r}", field="line") from None

    def gen_index(self, gen: str) -> int:
        try:
            return self._gen_index[gen]
        except KeyError:
            raise InstanceError(f"unknown generator {gen!r}", field="generator") from None

    def contingency_limit(self, line_idx: int, cont_idx: int | None) -> float:
        """F_l^c; ``cont_idx=None`` is the base case."""
        ln = self.lines[line_idx]
        if cont_idx is None:
            return ln.limit_base
        for lid, lim in self.contingencies[cont_idx].limit_overrides:
            if lid == ln.id:
                return lim
        return ln.limit_contingency

    def total_demand(self) -> np.ndarray:
        return self.demand.sum(axis=0)

    def gen_bus_indices(self) -> np.ndarray:
        return np.array([self._bus_index[g.bus] for g in self.generators], dtype=int)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.name == other.name
            and self.buses == other.buses
            and self.generators == other.generators
            and self.lines == other.lines
            and self.contingencies == other.contingencies
            and self.curtail_penalty == other.curtail_penalty
            and np.array_equal(self.demand, other.demand)
        )

    __hash__ = None


def generators_at_bus(instance: Instance, bus: str) -> list[str]:
    """Ids of the generators connected to ``bus``, sorted by id."""
    if bus not in instance._gens_by_bus:
        raise InstanceError(f"unknown bus {bus!r}", field="bus")
    return list(instance._gens_by_bus[bus])


# -- parsing -----------------------------------------------------------------

_GEN_REQUIRED = (
    "id", "bus", "p_min", "p_max", "startup_cap", "shutdown_cap", "ramp_up",
    "ramp_down", "min_up", "min_down", "cost_startup", "cost_noload",
    "cost_segments", "init_on",
)
_LINE_REQUIRED = ("id", "from_bus", "to_bus", "susceptance", "limit_base")
_TOP_REQUIRED = ("meta", "buses", "lines", "generators", "contingencies", "demand", "curtail_penalty")

# relative slack on "segment widths sum to p_max - p_min"
_WIDTH_RTOL = 1e-9


def _require(obj: Mapping, key: str, where: str) -> Any:
    if not isinstance(obj, Mapping):
        raise InstanceError(f"{where}: expected an object", field=where)
    if key not in obj:
        raise InstanceError(f"missing field {key!r} in {where}", field=key, invariant="required")
    return obj[key]


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError(f"{name}: expected a number, got {value!r}", field=name, invariant="type")
    if not np.isfinite(value):
        raise InstanceError(f"{name}: must be finite", field=name, invariant="finite")
    return float(value)


def _integer(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise InstanceError(f"{name}: expected an integer, got {value!r}", field=name, invariant="type")
    return int(value)


def _violation(where: str, fld: str, invariant: str) -> InstanceError:
    return InstanceError(f"{where}: invariant {invariant} violated (field {fld})", field=fld, invariant=invariant)


def _parse_generator(doc: Mapping, k: int) -> Generator:
    where = f"generators[{k}]"
    for key in _GEN_REQUIRED:
        _require(doc, key, where)
    gid = str(doc["id"])
    where = f"generator {gid}"
    segs_raw = doc["cost_segments"]
    if not isinstance(segs_raw, list):
        raise InstanceError(f"{where}: cost_segments must be a list", field="cost_segments", invariant="type")
    segs = []
    for j, s in enumerate(segs_raw):
        if isinstance(s, Mapping):
            w = _number(_require(s, "width", f"{where}.cost_segments[{j}]"), "width")
            m = _number(_require(s, "marginal_cost", f"{where}.cost_segments[{j}]"), "marginal_cost")
        else:
            w, m = (_number(v, "cost_segments") for v in s)
        segs.append((w, m))
    init_on = doc["init_on"]
    if not isinstance(init_on, bool):
        raise InstanceError(f"{where}: init_on must be boolean", field="init_on", invariant="type")
    g = Generator(
        id=gid,
        bus=str(doc["bus"]),
        p_min=_number(doc["p_min"], "p_min"),
        p_max=_number(doc["p_max"], "p_max"),
        startup_cap=_number(doc["startup_cap"], "startup_cap"),
        shutdown_cap=_number(doc["shutdown_cap"], "shutdown_cap"),
        ramp_up=_number(doc["ramp_up"], "ramp_up"),
        ramp_down=_number(doc["ramp_down"], "ramp_down"),
        min_up=_integer(doc["min_up"], "min_up"),
        min_down=_integer(doc["min_down"], "min_down"),
        cost_startup=_number(doc["cost_startup"], "cost_startup"),
        cost_noload=_number(doc["cost_noload"], "cost_noload"),
        cost_segments=tuple(segs),
        init_on=init_on,
        init_min_up_remaining=_integer(doc.get("init_min_up_remaining", 0), "init_min_up_remaining"),
        init_min_down_remaining=_integer(doc.get("init_min_down_remaining", 0), "init_min_down_remaining"),
        init_power=_number(doc.get("init_power", 0.0), "init_power"),
        cost_at_min=_number(doc.get("cost_at_min", 0.0), "cost_at_min"),
    )
    _check_generator(g)
    return g


def _check_generator(g: Generator) -> None:
    where = f"generator {g.id}"
    if g.p_min < 0:
        raise _violation(where, "p_min", "p_min>=0")
    if g.p_min > g.p_max:
        raise _violation(where, "p_max", "p_min<=p_max")
    for fld in ("startup_cap", "shutdown_cap", "ramp_up", "ramp_down", "cost_startup", "cost_noload"):
        if getattr(g, fld) < 0:
            raise _violation(where, fld, f"{fld}>=0")
    if any(w < 0 for w, _ in g.cost_segments):
        raise _violation(where, "cost_segments", "segment_width>=0")
    span = g.p_max - g.p_min
    width_sum = sum(w for w, _ in g.cost_segments)
    if abs(width_sum - span) > _WIDTH_RTOL * max(1.0, span):
        raise _violation(where, "cost_segments", "segment_widths_sum")
    marginals = [m for _, m in g.cost_segments]
    if any(b < a for a, b in zip(marginals, marginals[1:])):
        raise _violation(where, "cost_segments", "convex_costs")
    if g.min_up < 1:
        raise _violation(where, "min_up", "min_up>=1")
    if g.min_down < 1:
        raise _violation(where, "min_down", "min_down>=1")
    if g.init_min_up_remaining < 0:
        raise _violation(where, "init_min_up_remaining", "remaining>=0")
    if g.init_min_down_remaining < 0:
        raise _violation(where, "init_min_down_remaining", "remaining>=0")
    if g.init_on:
        if not (g.p_min <= g.init_power <= g.p_max):
            raise _violation(where, "init_power", "init_on=>p_min<=init_power<=p_max")
        if g.init_min_down_remaining > 0:
            raise _violation(where, "init_min_down_remaining", "remaining_matches_status")
    else:
        if g.init_power != 0:
            raise _violation(where, "init_power", "init_off=>init_power=0")
        if g.init_min_up_remaining > 0:
            raise _violation(where, "init_min_up_remaining", "remaining_matches_status")


def _parse_line(doc: Mapping, k: int) -> Line:
    where = f"lines[{k}]"
    for key in _LINE_REQUIRED:
        _require(doc, key, where)
    base = _number(doc["limit_base"], "limit_base")
    ln = Line(
        id=str(doc["id"]),
        from_bus=str(doc["from_bus"]),
        to_bus=str(doc["to_bus"]),
        susceptance=_number(doc["susceptance"], "susceptance"),
        limit_base=base,
        limit_contingency=_number(doc.get("limit_contingency", base), "limit_contingency"),
    )
    where = f"line {ln.id}"
    if ln.susceptance <= 0:
        raise _violation(where, "susceptance", "susceptance>0")
    if ln.limit_base <= 0:
        raise _violation(where, "limit_base", "limit>0")
    if ln.limit_contingency <= 0:
        raise _violation(where, "limit_contingency", "limit>0")
    if ln.from_bus == ln.to_bus:
        raise _violation(where, "to_bus", "from_bus!=to_bus")
    return ln


def _parse_contingency(doc: Mapping, k: int) -> Contingency:
    where = f"contingencies[{k}]"
    cid = str(_require(doc, "id", where))
    line = str(_require(doc, "outaged_line", where))
    overrides = doc.get("limit_overrides", {}) or {}
    if not isinstance(overrides, Mapping):
        raise InstanceError(f"contingency {cid}: limit_overrides must be an object", field="limit_overrides", invariant="type")
    ov = []
    for lid, lim in sorted(overrides.items()):
        v = _number(lim, "limit_overrides")
        if v <= 0:
            raise _violation(f"contingency {cid}", "limit_overrides", "limit>0")
        ov.append((str(lid), v))
    return Contingency(id=cid, outaged_line=line, limit_overrides=tuple(ov))


def _unique(ids, kind: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise InstanceError(f"duplicate {kind} id {i!r}", field=kind, invariant="unique_id")
        seen.add(i)


def parse_instance(document: bytes | str | Mapping) -> Instance:
    """Parse and validate an instance document.

    Accepts raw bytes/str (JSON text) or an already decoded mapping.  All
    cross references are resolved and contingencies whose outaged line is a
    bridge are rejected.
    """
    if isinstance(document, (bytes, bytearray)):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InstanceError(f"syntax error: not UTF-8 (byte {exc.start})", invariant=None) from exc
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise InstanceError(
                f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise InstanceError("syntax error: top level must be a JSON object")
    for key in _TOP_REQUIRED:
        _require(doc, key, "document")

    meta = doc["meta"]
    name = str(_require(meta, "name", "meta"))
    horizon = _integer(_require(meta, "horizon", "meta"), "horizon")
    if horizon < 1:
        raise _violation("meta", "horizon", "horizon>=1")

    buses = tuple(str(b["id"]) if isinstance(b, Mapping) else str(b) for b in doc["buses"])
    _unique(buses, "bus")
    if not buses:
        raise _violation("document", "buses", "nonempty")
    bus_set = set(buses)

    lines = tuple(_parse_line(d, k) for k, d in enumerate(doc["lines"]))
    _unique([ln.id for ln in lines], "line")
    for ln in lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in bus_set:
                raise InstanceError(f"line {ln.id}: dangling reference to bus {end!r}", field="bus", invariant="reference")

    gens = tuple(_parse_generator(d, k) for k, d in enumerate(doc["generators"]))
    _unique([g.id for g in gens], "generator")
    for g in gens:
        if g.bus not in bus_set:
            raise InstanceError(f"generator {g.id}: dangling reference to bus {g.bus!r}", field="bus", invariant="reference")

    line_ids = {ln.id for ln in lines}
    conts = tuple(_parse_contingency(d, k) for k, d in enumerate(doc["contingencies"]))
    _unique([c.id for c in conts], "contingency")
    for c in conts:
        if c.outaged_line not in line_ids:
            raise InstanceError(
                f"contingency {c.id}: dangling reference to line {c.outaged_line!r}",
                field="outaged_line", invariant="reference",
            )
        for lid, _ in c.limit_overrides:
            if lid not in line_ids:
                raise InstanceError(f"contingency {c.id}: dangling reference to line {lid!r}", field="limit_overrides", invariant="reference")

    dem_doc = doc["demand"]
    if not isinstance(dem_doc, Mapping):
        raise InstanceError("demand must map bus id to an array", field="demand", invariant="type")
    demand = np.zeros((len(buses), horizon))
    index = {b: i for i, b in enumerate(buses)}
    for b, series in dem_doc.items():
        if b not in index:
            raise InstanceError(f"demand: dangling reference to bus {b!r}", field="demand", invariant="reference")
        if not isinstance(series, list) or len(series) != horizon:
            raise InstanceError(f"demand[{b}]: expected {horizon} values", field="demand", invariant="horizon_length")
        demand[index[b]] = [_number(v, "demand") for v in series]
    if (demand < 0).any():
        raise _violation("document", "demand", "demand>=0")

    penalty = _number(doc["curtail_penalty"], "curtail_penalty")
    if penalty < 0:
        raise _violation("document", "curtail_penalty", "curtail_penalty>=0")

    inst = Instance(name=name, buses=buses, generators=gens, lines=lines,
                    contingencies=conts, demand=demand, curtail_penalty=penalty)
    _check_topology(inst)
    return inst


def _check_topology(inst: Instance) -> None:
    from . import network

    frm = np.array([inst.bus_index(ln.from_bus) for ln in inst.lines], dtype=int)
    to = np.array([inst.bus_index(ln.to_bus) for ln in inst.lines], dtype=int)
    if not network.is_connected(inst.n_buses, frm, to):
        raise InstanceError("network is not connected in the base case", field="lines", invariant="connected")
    if not inst.contingencies:
        return
    sus = np.array([ln.susceptance for ln in inst.lines])
    bridges = set(network.bridge_lines(inst.n_buses, frm, to, sus).tolist())
    for c in inst.contingencies:
        if inst.line_index(c.outaged_line) in bridges:
            raise InstanceError(
                f"contingency {c.id}: outaged line {c.outaged_line} is a bridge (outage islands the network)",
                field="outaged_line", invariant="non_bridge",
            )


def load_instance(path) -> Instance:
    with open(path, "rb") as fh:
        return parse_instance(fh.read())


# -- serialization -----------------------------------------------------------

def _gen_doc(g: Generator) -> dict:
    return {
        "id": g.id, "bus": g.bus, "p_min": g.p_min, "p_max": g.p_max,
        "startup_cap": g.startup_cap, "shutdown_cap": g.shutdown_cap,
        "ramp_up": g.ramp_up, "ramp_down": g.ramp_down,
        "min_up": g.min_up, "min_down": g.min_down,
        "cost_startup": g.cost_startup, "cost_noload": g.cost_noload,
        "cost_at_min": g.cost_at_min,
        "cost_segments": [{"width": w, "marginal_cost": m} for w, m in g.cost_segments],
        "init_on": g.init_on,
        "init_min_up_remaining": g.init_min_up_remaining,
        "init_min_down_remaining": g.init_min_down_remaining,
        "init_power": g.init_power,
    }


def serialize_instance(inst: Instance) -> dict:
    return {
        "meta": {"name": inst.name, "horizon": inst.horizon},
        "buses": [{"id": b} for b in inst.buses],
        "lines": [
            {"id": ln.id, "from_bus": ln.from_bus, "to_bus": ln.to_bus,
             "susceptance": ln.susceptance, "limit_base": ln.limit_base,
             "limit_contingency": ln.limit_contingency}
            for ln in inst.lines
        ],
        "generators": [_gen_doc(g) for g in inst.generators],
        "contingencies": [
            {"id": c.id, "outaged_line": c.outaged_line,
             **({"limit_overrides": dict(c.limit_overrides)} if c.limit_overrides else {})}
            for c in inst.contingencies
        ],
        "demand": {b: inst.demand[i].tolist() for i, b in enumerate(inst.buses)},
        "curtail_penalty": inst.curtail_penalty,
    }


def dump_instance(inst: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(serialize_instance(inst), fh, indent=1)
        fh.write("\n")
