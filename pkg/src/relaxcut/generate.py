"""Deterministic synthetic SCUC instances for desk-scale experiments."""
from __future__ import annotations

import logging

import numpy as np

from .instance import Contingency, Generator, Instance, Line
from .network import bridge_lines, build_sensitivities

__all__ = ["GenerationError", "generate_instance", "daily_profile"]

log = logging.getLogger(__name__)


class GenerationError(ValueError):
    pass


def daily_profile(T: int) -> np.ndarray:
    """Relative load with a morning and an evening peak, max 1."""
    hours = (np.arange(T) + 0.5) * 24.0 / T
    prof = 0.45 + 0.3 * np.exp(-((hours - 9.0) / 2.5) ** 2) + 0.5 * np.exp(-((hours - 19.0) / 2.5) ** 2)
    return prof / prof.max()


# (share of fleet, p_min ratio, min up/down range, ramp ratio, marginal range, no-load, start-up)
_CLASSES = {
    "base": (0.4, 0.45, (6, 10), 0.2, (12.0, 20.0), (150.0, 300.0), (3000.0, 8000.0)),
    "mid": (0.35, 0.3, (3, 5), 0.35, (28.0, 40.0), (60.0, 150.0), (600.0, 1500.0)),
    "peaker": (0.25, 0.1, (1, 2), 1.0, (55.0, 85.0), (10.0, 40.0), (40.0, 150.0)),
}


def _fleet_classes(n: int) -> list[str]:
    out = []
    for name, spec in _CLASSES.items():
        out += [name] * int(round(spec[0] * n))
    order = ["base", "mid", "peaker"]
    while len(out) < n:
        out.append(order[len(out) % 3])
    return sorted(out[:n], key=order.index)


def _network(rng, n_bus: int, n_line: int):
    if n_line < n_bus - 1:
        raise GenerationError(f"{n_line} lines cannot connect {n_bus} buses")
    max_lines = n_bus * (n_bus - 1) // 2
    if n_line > max_lines:
        raise GenerationError(f"{n_line} lines exceed the {max_lines} distinct bus pairs")
    pairs = []
    seen = set()
    for i in range(1, n_bus):
        j = int(rng.integers(max(0, i - 3), i))  # local attachment keeps the graph meshy
        pairs.append((j, i))
        seen.add((j, i))
    while len(pairs) < n_line:
        a, b = sorted(int(v) for v in rng.choice(n_bus, size=2, replace=False))
        if (a, b) in seen:
            continue
        seen.add((a, b))
        pairs.append((a, b))
    return pairs


def generate_instance(n_buses: int, n_generators: int, n_lines: int, n_contingencies: int,
                      horizon: int, seed: int, peak_demand: float | None = None,
                      capacity_margin: float = 1.3, name: str | None = None) -> Instance:
    """Synthetic instance: connected mesh, double-peak demand, mixed fleet.

    ``capacity_margin`` is installed capacity over peak demand; values below
    one are allowed (curtailment keeps the problem feasible) with a notice.
    """
    for label, v in (("buses", n_buses), ("generators", n_generators), ("lines", n_lines), ("horizon", horizon)):
        if v < 1:
            raise GenerationError(f"{label} must be positive")
    if n_contingencies < 0:
        raise GenerationError("contingencies must be non-negative")
    rng = np.random.default_rng(seed)
    buses = tuple(f"b{i + 1}" for i in range(n_buses))
    pairs = _network(rng, n_buses, n_lines)
    sus = np.round(rng.uniform(5.0, 20.0, size=len(pairs)), 3)
    frm = np.array([a for a, _ in pairs], dtype=int)
    to = np.array([b for _, b in pairs], dtype=int)

    bridges = set(bridge_lines(n_buses, frm, to, sus).tolist()) if n_buses > 1 else set(range(len(pairs)))
    candidates = [l for l in range(len(pairs)) if l not in bridges]
    if n_contingencies > len(candidates):
        raise GenerationError(f"{n_contingencies} contingencies requested but only {len(candidates)} non-bridge lines")
    cont_lines = sorted(int(v) for v in rng.choice(candidates, size=n_contingencies, replace=False)) if n_contingencies else []

    peak = float(peak_demand) if peak_demand is not None else 100.0 * n_generators
    n_load = max(1, int(round(0.6 * n_buses)))
    load_buses = sorted(int(v) for v in rng.choice(n_buses, size=n_load, replace=False))
    weights = rng.uniform(0.5, 1.5, size=n_load)
    weights /= weights.sum()
    profile = daily_profile(horizon)
    demand = np.zeros((n_buses, horizon))
    noise = 1.0 + 0.03 * rng.standard_normal((n_load, horizon))
    for k, b in enumerate(load_buses):
        demand[b] = np.round(peak * weights[k] * profile * noise[k], 2)
    demand = np.maximum(demand, 0.0)

    classes = _fleet_classes(n_generators)
    raw_cap = rng.uniform(0.7, 1.3, size=n_generators) * np.array([{"base": 2.0, "mid": 1.2, "peaker": 0.7}[c] for c in classes])
    if capacity_margin * demand.sum(axis=0).max() > 0:
        caps = raw_cap / raw_cap.sum() * capacity_margin * demand.sum(axis=0).max()
    else:
        caps = raw_cap
    caps = np.round(caps, 1)
    gen_bus = rng.integers(0, n_buses, size=n_generators)
    gens = []
    for i, cls in enumerate(classes):
        _, pmin_r, updown, ramp_r, mc, nl, su = _CLASSES[cls]
        pmax = float(caps[i])
        pmin = round(pmin_r * pmax, 1)
        ut = int(rng.integers(updown[0], updown[1] + 1))
        dt = int(rng.integers(updown[0], updown[1] + 1))
        ramp = round(max(ramp_r * pmax, 1.0), 1)
        m0 = float(np.round(rng.uniform(*mc), 2))
        span = round(pmax - pmin, 1)
        widths = [round(span / 3, 4), round(span / 3, 4)]
        widths.append(round(span - sum(widths), 4))
        marg = [round(m0 * f, 2) for f in (1.0, 1.08, 1.2)]
        init_on = cls == "base" and rng.random() < 0.5
        gens.append(Generator(
            id=f"g{i + 1}", bus=buses[int(gen_bus[i])], p_min=pmin, p_max=pmax,
            startup_cap=round(max(pmin, 0.5 * pmax), 1), shutdown_cap=round(max(pmin, 0.5 * pmax), 1),
            ramp_up=ramp, ramp_down=ramp, min_up=ut, min_down=dt,
            cost_startup=float(np.round(rng.uniform(*su), 1)), cost_noload=float(np.round(rng.uniform(*nl), 1)),
            cost_segments=tuple(zip(widths, marg)), init_on=bool(init_on),
            init_min_up_remaining=int(rng.integers(0, ut)) if init_on else 0,
            init_min_down_remaining=0,
            init_power=pmin if init_on else 0.0,
            cost_at_min=round(pmin * m0 * 0.9, 2),
        ))
    if sum(g.p_max for g in gens) < demand.sum(axis=0).max():
        log.warning("installed capacity below peak demand; curtailment will be needed")

    lines = tuple(
        Line(id=f"l{k + 1}", from_bus=buses[a], to_bus=buses[b], susceptance=float(sus[k]),
             limit_base=1.0, limit_contingency=1.0)
        for k, (a, b) in enumerate(pairs)
    )
    conts = tuple(Contingency(id=f"c{k + 1}", outaged_line=f"l{l + 1}") for k, l in enumerate(cont_lines))
    penalty = 1000.0
    draft = Instance(name=name or f"syn-{n_buses}b-{n_generators}g-s{seed}", buses=buses, generators=tuple(gens),
                     lines=lines, contingencies=conts, demand=demand, curtail_penalty=penalty)

    # limits from a capacity-proportional reference dispatch
    if n_buses > 1:
        sens = build_sensitivities(draft)
        cap = np.array([g.p_max for g in gens])
        share = cap / cap.sum()
        inj = np.zeros((n_buses, horizon))
        np.add.at(inj, draft.gen_bus_indices(), np.outer(share, demand.sum(axis=0)))
        inj -= demand
        base = sens.ptdf_base @ inj
        worst = np.abs(base).max(axis=1)
        for c in range(len(conts)):
            k = sens.outaged[c]
            post = base + np.multiply.outer(sens.lodf[:, c], base[k])
            post[k] = 0.0
            worst = np.maximum(worst, np.abs(post).max(axis=1) / 1.25)
        floor = 0.05 * peak
        limits = np.round(np.maximum(worst * rng.uniform(0.85, 1.3, size=len(lines)), floor), 1)
    else:
        limits = np.full(len(lines), peak)
    lines = tuple(
        Line(id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus, susceptance=ln.susceptance,
             limit_base=float(limits[k]), limit_contingency=float(round(1.25 * limits[k], 1)))
        for k, ln in enumerate(lines)
    )
    return Instance(name=draft.name, buses=buses, generators=tuple(gens), lines=lines,
                    contingencies=conts, demand=demand.copy(), curtail_penalty=penalty)
