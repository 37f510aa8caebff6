import numpy as np
import pytest

import relaxcut.milp as milp
from relaxcut.formulation import (BINARY, RELAXED, BoundaryState, FormulationError, build_model,
                                  objective_value, production_cost, segment_split)
from relaxcut.generate import generate_instance
from relaxcut.instance import parse_instance
from relaxcut.milp import SolveControls, solve_lp
from relaxcut.network import build_sensitivities
from relaxcut.schedule import Schedule

from builders import base_doc, gen_doc, tiny


def one_gen(p_min, p_max, segments, cost_at_min):
    doc = base_doc(1)
    g = gen_doc("g1", "A", p_min, p_max, 1.0, cost_at_min=cost_at_min)
    g["cost_segments"] = [{"width": w, "marginal_cost": c} for w, c in segments]
    doc["generators"] = [g]
    return parse_instance(doc).generators[0]


def test_production_cost_examples():
    g = one_gen(10.0, 20.0, [(10.0, 5.0)], 100.0)
    assert production_cost(g, 0, 0.0) == 0.0
    assert production_cost(g, 1, 16.0) == pytest.approx(130.0)
    g2 = one_gen(10.0, 20.0, [(5.0, 4.0), (5.0, 9.0)], 100.0)
    assert production_cost(g2, 1, 18.0) == pytest.approx(147.0)


def test_greedy_split_is_cheapest():
    g = one_gen(10.0, 20.0, [(5.0, 4.0), (5.0, 9.0)], 100.0)
    for power in np.linspace(10, 20, 41):
        # brute force over the first segment's share on a fine grid
        best = min(4 * a + 9 * (power - 10 - a) for a in np.linspace(0, 5, 501)
                   if 0 <= power - 10 - a <= 5 + 1e-12)
        assert production_cost(g, 1, power) - 100 == pytest.approx(best, abs=1e-9)
    assert segment_split(g, 13.0) == [3.0, 0.0]


def test_production_cost_bounds():
    g = one_gen(10.0, 20.0, [(10.0, 5.0)], 100.0)
    with pytest.raises(FormulationError):
        production_cost(g, 1, 25.0)
    with pytest.raises(FormulationError):
        production_cost(g, 0, 5.0)


def test_single_period_counts():
    inst = tiny(T=1)
    sens = build_sensitivities(inst)
    m = build_model(inst, integer_prefix=1, security_mode="enumerate", sens=sens)
    assert m.integer_mask.sum() == 3
    names = {n[0] for n in m.names}
    assert names == {"x", "z", "w", "p", "segment", "curtail"}
    assert sum(1 for n in m.names if n[0] == "p" and n[2] == 0) == 1
    assert sum(1 for n in m.names if n[0] == "segment") == 1
    assert sum(1 for n in m.names if n[0] == "curtail") == inst.n_buses
    assert m.tags <= {"initial_status", "logic", "min_updown", "init_power", "prod_limits", "ramp", "balance", "security"}
    assert {"logic", "min_updown", "init_power", "prod_limits", "ramp", "balance", "security"} <= m.tags
    sec = [c for c in m.constraints if c.tag == "security"]
    assert all(c.cut_id.contingency is None for c in sec)


def test_relaxed_tail():
    inst = tiny(T=2)
    m = build_model(inst, integer_prefix=1)
    assert m.domains[m.var("x", "g1", 0)] == BINARY
    assert m.domains[m.var("x", "g1", 1)] == RELAXED


def test_initial_up_time_pins():
    doc = base_doc(T=4)
    doc["generators"][0].update(init_on=True, init_power=50.0, init_min_up_remaining=2, min_up=3)
    inst = parse_instance(doc)
    m = build_model(inst)
    pinned = [c for c in m.constraints if c.tag == "initial_status"]
    assert [c.name[2] for c in pinned] == [0, 1]
    assert all(c.rhs == 1.0 and c.sense == "==" for c in pinned)


def test_bad_arguments():
    inst = tiny(T=2)
    with pytest.raises(FormulationError):
        build_model(inst, integer_prefix=3)
    theta = BoundaryState.from_instance(tiny(T=2, generators=[gen_doc("g1", "A", 0, 10, 1), gen_doc("g2", "A", 0, 10, 1)]))
    with pytest.raises(FormulationError):
        build_model(inst, theta)


def test_enumerated_row_count():
    inst = generate_instance(9, 4, 13, 3, 3, seed=8)
    sens = build_sensitivities(inst)
    m = build_model(inst, security_mode="enumerate", sens=sens)
    seen = {}
    for c in m.constraints:
        if c.tag == "security":
            key = (c.cut_id.line, c.cut_id.period, c.cut_id.contingency)
            seen.setdefault(key, set()).add(c.cut_id.direction)
    L, H, C = len(inst.lines), inst.horizon, len(inst.contingencies)
    # the outaged line carries no flow under its own contingency, so that row is omitted
    assert len(seen) == L * H * (1 + C) - C * H
    assert all(v == {"upper", "lower"} for v in seen.values())


@pytest.mark.parametrize("seed", range(5))
def test_relaxation_bound(seed):
    inst = generate_instance(5, 3, 6, 1, 3, seed=seed)
    sens = build_sensitivities(inst)
    m = build_model(inst, security_mode="enumerate", sens=sens)
    lp = solve_lp(m.relaxed())
    mip = milp.solve_milp(m, SolveControls(mip_gap=0.0))
    assert lp.objective <= mip.objective + 1e-6 * max(1.0, abs(mip.objective))


def test_full_curtailment_cost():
    inst = generate_instance(6, 3, 8, 0, 4, seed=1)
    G, T = len(inst.generators), inst.horizon
    doc_off = Schedule.from_commitment(inst, np.zeros((G, T)), np.zeros((G, T)), inst.demand.copy())
    # units that start committed pay a shut-down transition, not a cost
    assert objective_value(inst, doc_off) == pytest.approx(inst.curtail_penalty * inst.demand.sum())


def random_feasible_point(inst, m, rng):
    """Random commitment and dispatch with curtailment closing the balance."""
    G, T = len(inst.generators), inst.horizon
    x = rng.integers(0, 2, (G, T))
    p = np.zeros((G, T))
    for gi, g in enumerate(inst.generators):
        p[gi] = x[gi] * rng.uniform(g.p_min, g.p_max, T)
    sched = Schedule.from_commitment(inst, x, p, np.zeros((inst.n_buses, T)))
    cur = np.zeros((inst.n_buses, T))
    cur[1] = inst.demand[1] - p.sum(axis=0)
    sched.curtail = cur
    v = np.zeros(m.n_vars)
    V = m.index
    for gi, g in enumerate(inst.generators):
        v[V["p", g.id, -1]] = m.lo[V["p", g.id, -1]]
        for t in range(T):
            v[V["x", g.id, t]], v[V["z", g.id, t]], v[V["w", g.id, t]] = x[gi, t], sched.z[gi, t], sched.w[gi, t]
            v[V["p", g.id, t]] = p[gi, t]
            if x[gi, t]:
                for k, s in enumerate(segment_split(g, p[gi, t])):
                    v[V["segment", g.id, t, k]] = s
    for bi, b in enumerate(inst.buses):
        for t in range(T):
            v[V["curtail", b, t]] = cur[bi, t]
    return sched, v


def test_objective_matches_model():
    # unrestricted units so any random commitment is feasible
    doc = base_doc(T=4)
    doc["demand"]["B"] = [1000.0] * 4
    doc["generators"] = [
        gen_doc("g1", "A", 10.0, 100.0, 20.0, cost_noload=7.0, cost_startup=30.0, cost_at_min=50.0),
        gen_doc("g2", "B", 0.0, 80.0, 35.0, cost_startup=11.0),
        gen_doc("g3", "A", 20.0, 60.0, 5.0, cost_noload=3.0, init_on=True, init_power=30.0),
    ]
    doc["generators"][0]["cost_segments"] = [{"width": 30.0, "marginal_cost": 10.0}, {"width": 60.0, "marginal_cost": 25.0}]
    inst = parse_instance(doc)
    m = build_model(inst)
    rng = np.random.default_rng(0)
    for _ in range(100):
        sched, v = random_feasible_point(inst, m, rng)
        assert m.max_violation(v) <= 1e-7
        assert objective_value(inst, sched) == pytest.approx(m.objective(v), rel=1e-9)


def test_lp_dump_names():
    inst = tiny(T=1)
    sens = build_sensitivities(inst)
    text = build_model(inst, security_mode="enumerate", sens=sens).to_lp()
    assert "x[g1,0]" in text and "Binaries" in text
    assert "flow_ub[AB,0,base]" in text
