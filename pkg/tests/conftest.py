"""Shared fixtures.

Every branch-and-bound run in the suite is wrapped so that bound and
incumbent monotonicity and cut persistence are checked on each solve, not
only in the dedicated MILP tests.
"""
import numpy as np
import pytest

import relaxcut.milp as milp_pkg
import relaxcut.milp.bnb as bnb
import relaxcut.separation as separation

_original_solve = bnb.solve_milp
MONITOR = {"solves": 0, "failures": []}
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def _monitored_solve(model, controls=bnb.SolveControls(), on_integer_solution=None, initial_solution=None):
    pooled = []
    failures = MONITOR["failures"]

    def wrapped(point):
        for con in pooled:
            if con.violation(point) > 1e-6:
                failures.append(f"callback saw an integral point violating pooled cut {con.name}")
                break
        cuts = list(on_integer_solution(point))
        pooled.extend(cuts)
        return cuts

    out = _original_solve(model, controls, wrapped if on_integer_solution else None, initial_solution)
    MONITOR["solves"] += 1
    bounds = [b for _, b in out.stats.bound_trace]
    if any(b2 < b1 - 1e-9 * max(1.0, abs(b1)) for b1, b2 in zip(bounds, bounds[1:])):
        failures.append("best bound decreased")
    incs = [v for _, v in out.stats.incumbent_trace]
    if any(v2 > v1 for v1, v2 in zip(incs, incs[1:])):
        failures.append("incumbent objective increased")
    if out.incumbent is not None:
        bad = [con.name for con in pooled if con.violation(out.incumbent) > 1e-6]
        if bad:
            failures.append(f"final incumbent violates pooled cuts {bad[:3]}")
        if out.best_bound > out.objective + 1e-6 * max(1.0, abs(out.objective)):
            failures.append("best bound above incumbent")
    return out


@pytest.fixture(autouse=True)
def monitored_milp(monkeypatch):
    for mod in (bnb, milp_pkg, separation):
        monkeypatch.setattr(mod, "solve_milp", _monitored_solve)
    start = len(MONITOR["failures"])
    yield MONITOR
    new = MONITOR["failures"][start:]
    assert not new, f"branch-and-bound invariant broken: {new}"


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str = ""):
        ACCEPTANCE[number] = (passed, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    terminalreporter.write_line(f"branch-and-bound solves monitored: {MONITOR['solves']}")


def assert_close_rel(a, b, rel):
    assert abs(a - b) <= rel * max(1.0, abs(b)), (a, b)


np.set_printoptions(linewidth=140)
