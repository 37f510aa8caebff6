import csv

import numpy as np
import pytest

from relaxcut.formulation import SecurityCutId, build_model
from relaxcut.generate import generate_instance
from relaxcut.instance import parse_instance
from relaxcut.milp import SolveControls, Status
from relaxcut.network import build_sensitivities
from relaxcut.separation import (CutPool, ScreeningError, Violation, screen, select_cuts, solve_scuc,
                                 solve_with_dynamic_cuts, solve_with_filtering)
from relaxcut.validate import check_schedule
from relaxcut.formulation import schedule_from_values
from relaxcut.schedule import Schedule

from builders import base_doc, gen_doc, triangle_doc


def test_no_flow_no_violation():
    doc = base_doc(T=2)
    doc["generators"][0]["bus"] = "B"
    inst = parse_instance(doc)
    sens = build_sensitivities(inst)
    assert screen([[50.0, 50.0]], np.zeros((2, 2)), sens, inst, range(2)) == []


def test_triangle_overload_on_direct_line():
    inst = parse_instance(triangle_doc(limit=50.0, demand_c=90.0))
    sens = build_sensitivities(inst)
    found = screen([[90.0]], np.zeros((3, 1)), sens, inst, [0])
    assert [v.id for v in found] == [SecurityCutId("AC", 0, None, "upper")]
    # direct solve: A->C carries 2/3 of 90 MW
    assert found[0].flow == pytest.approx(60.0, abs=1e-9)
    assert found[0].normalized_excess == pytest.approx(0.2)


def test_unbalanced_assignment_rejected():
    inst = parse_instance(triangle_doc())
    sens = build_sensitivities(inst)
    with pytest.raises(ScreeningError):
        screen([[10.0]], np.zeros((3, 1)), sens, inst, [0])


def congested(seed=3, T=4):
    inst = generate_instance(16, 6, 24, 8, T, seed)
    # shrink every limit so that a cheap dispatch overloads many rows
    from relaxcut.instance import serialize_instance
    doc = serialize_instance(inst)
    for ln in doc["lines"]:
        ln["limit_base"] *= 0.5
        ln["limit_contingency"] = ln["limit_base"] * 1.1
    inst = parse_instance(doc)
    return inst, build_sensitivities(inst)


def merit_dispatch(inst):
    """Everything from the cheapest units, ignoring the network."""
    order = sorted(range(len(inst.generators)), key=lambda g: inst.generators[g].cost_segments[0][1])
    p = np.zeros((len(inst.generators), inst.horizon))
    for t in range(inst.horizon):
        need = inst.demand[:, t].sum()
        for g in order:
            take = min(need, inst.generators[g].p_max)
            p[g, t] = take
            need -= take
    return p


def test_parallel_screen_is_deterministic():
    inst, sens = congested()
    p = merit_dispatch(inst)
    cur = np.zeros((inst.n_buses, inst.horizon))
    serial = screen(p, cur, sens, inst, range(inst.horizon), workers=1)
    assert len(serial) > 20
    for w in (2, 3, 8):
        assert screen(p, cur, sens, inst, range(inst.horizon), workers=w) == serial
    keys = [(-v.normalized_excess, v.order) for v in serial]
    assert keys == sorted(keys)


def test_screen_finds_exactly_the_violated_rows():
    inst, sens = congested()
    p = merit_dispatch(inst)
    cur = np.zeros((inst.n_buses, inst.horizon))
    found = {v.id for v in screen(p, cur, sens, inst, range(inst.horizon))}
    inj = np.zeros((inst.n_buses, inst.horizon))
    np.add.at(inj, inst.gen_bus_indices(), p)
    inj -= inst.demand
    want = set()
    for c in [None] + list(range(len(inst.contingencies))):
        cid = None if c is None else inst.contingencies[c].id
        for l, ln in enumerate(inst.lines):
            if c is not None and sens.outaged[c] == l:
                continue
            flows = sens.row(l, c) @ inj
            lim = inst.contingency_limit(l, c)
            for t in range(inst.horizon):
                if (abs(flows[t]) - lim) / lim > 1e-5:
                    want.add(SecurityCutId(ln.id, t, cid, "upper" if flows[t] > 0 else "lower"))
    assert found == want


def test_evaluation_count():
    inst, sens = congested()
    p = merit_dispatch(inst)
    stats = {}
    screen(p, np.zeros((inst.n_buses, inst.horizon)), sens, inst, range(inst.horizon), workers=3, stats=stats)
    L, C, H = len(inst.lines), len(inst.contingencies), inst.horizon
    assert stats["evaluations"] == L * (1 + C) * H


def _fake(t, excess, l=0):
    return Violation(SecurityCutId(f"L{l}", t, None, "upper"), 1.0, 1.0, excess, (t, 0, l, 0))


def test_select_single():
    v = _fake(0, 0.5)
    assert select_cuts([v]) == [v]


def test_select_cap():
    vs = sorted([_fake(3, 0.01 * (k + 1), k) for k in range(20)], key=lambda v: -v.normalized_excess)
    chosen = select_cuts(vs, 15)
    assert len(chosen) == 15
    assert {v.normalized_excess for v in chosen} == {v.normalized_excess for v in vs[:15]}


def test_select_pool_fallback():
    vs = [_fake(0, 0.3, 1), _fake(0, 0.1, 2)]
    pool = CutPool()
    for v in vs:
        pool.add(v)
    assert select_cuts(vs, pool=pool) == [vs[0]]
    assert select_cuts([]) == []


def test_secure_optimum_needs_no_cuts():
    inst = parse_instance(triangle_doc(limit=1000.0))
    sens = build_sensitivities(inst)
    _, res = solve_scuc(inst, sens, "dynamic", SolveControls(mip_gap=0.0))
    _, free = solve_scuc(inst, sens, "filtering", SolveControls(mip_gap=0.0))
    assert len(res.pool) == 0 and free.rounds == 1
    assert res.outcome.objective == pytest.approx(free.outcome.objective)


def test_shortage_is_curtailed_with_cuts():
    doc = triangle_doc(limit=50.0, demand_c=400.0)
    doc["generators"].append(gen_doc("g2", "B", 0.0, 100.0, 30.0))
    inst = parse_instance(doc)
    sens = build_sensitivities(inst)
    model, res = solve_scuc(inst, sens, "dynamic", SolveControls(mip_gap=0.0))
    assert res.outcome.status == Status.OPTIMAL
    vals = schedule_from_values(inst, model, res.outcome.incumbent)
    assert vals["curtail"].sum() > 0
    assert len(res.pool) > 0
    sched = Schedule.from_commitment(inst, vals["x"], vals["p"], vals["curtail"])
    assert check_schedule(inst, sens, sched).feasible


def two_round_instance():
    """Cheap unit at A behind a line that only overloads when A-C is out."""
    doc = triangle_doc(limit=1000.0, demand_c=120.0)
    doc["lines"][0]["limit_contingency"] = 1000.0
    doc["lines"][1]["limit_base"] = 1000.0
    doc["lines"][1]["limit_contingency"] = 100.0  # B-C under outage of A-C
    doc["contingencies"] = [{"id": "cAC", "outaged_line": "AC"}]
    doc["generators"].append(gen_doc("g2", "C", 0.0, 200.0, 40.0))
    return parse_instance(doc)


def test_filtering_needs_two_rounds():
    inst = two_round_instance()
    sens = build_sensitivities(inst)
    _, res = solve_scuc(inst, sens, "filtering", SolveControls(mip_gap=0.0))
    assert res.rounds >= 2
    assert all(v.contingency == "cAC" for v in res.pool.ids())
    _, enum = solve_scuc(inst, sens, "enumerate", SolveControls(mip_gap=0.0))
    assert res.outcome.objective == pytest.approx(enum.outcome.objective, rel=1e-9)
    # cheapest secure dispatch: 100 MW over A (limited by B-C post-outage), 20 MW local
    assert enum.outcome.objective == pytest.approx(100 * 10 + 20 * 40)


@pytest.mark.parametrize("seed", [2, 3])
def test_modes_agree_on_small_instances(seed):
    inst, sens = congested(seed, T=3)
    objs = {}
    for sep in ("enumerate", "dynamic", "filtering"):
        model, res = solve_scuc(inst, sens, sep, SolveControls(mip_gap=1e-4))
        objs[sep] = res.outcome.objective
        vals = schedule_from_values(inst, model, res.outcome.incumbent)
        sched = Schedule.from_commitment(inst, vals["x"], vals["p"], vals["curtail"])
        assert check_schedule(inst, sens, sched).feasible, sep
    ref = objs["enumerate"]
    assert all(abs(v - ref) <= 2e-4 * ref for v in objs.values()), objs


def test_pool_is_monotone_and_unique():
    inst, sens = congested(3, T=3)
    model = build_model(inst, security_mode="lazy")
    res = solve_with_dynamic_cuts(model, sens, inst, SolveControls(mip_gap=1e-3))
    ids = res.pool.ids()
    assert len(ids) == len(set(ids)) == len(res.pool)
    assert sum(1 for c in model.constraints if c.tag == "security") >= len(ids)


def test_cut_pool_csv(tmp_path):
    inst, sens = congested(2, T=2)
    model = build_model(inst, security_mode="lazy")
    res = solve_with_filtering(model, sens, inst, SolveControls(mip_gap=1e-3))
    path = tmp_path / "cuts.csv"
    res.pool.dump_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["line", "period", "contingency", "direction", "flow", "limit"]
    assert len(rows) - 1 == len(res.pool)
