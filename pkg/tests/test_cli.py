import csv
import json
import logging

import pytest

from relaxcut.cli import benchmark_rows, main

from builders import restart_instance


def gen(tmp_path, name="inst.json", seed=7, T=12, extra=()):
    path = tmp_path / name
    assert main(["generate", "--buses", "8", "--generators", "4", "--lines", "11", "--contingencies", "2",
                 "-T", str(T), "--seed", str(seed), "--output", str(path), *extra]) == 0
    return path


def test_generate_is_deterministic(tmp_path):
    a = gen(tmp_path, "a.json")
    b = gen(tmp_path, "b.json")
    assert a.read_bytes() == b.read_bytes()


def test_generate_errors(tmp_path):
    rc = main(["generate", "--buses", "8", "--generators", "3", "--lines", "5", "--contingencies", "0",
               "--output", str(tmp_path / "x.json")])
    assert rc == 64


def test_generate_short_capacity_notice(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        gen(tmp_path, extra=("--capacity-margin", "0.5"))
    assert any("capacity" in r.message for r in caplog.records)


@pytest.mark.parametrize("flags", [
    ["--mode", "td-r", "--sI", "6", "--sR", "6", "--dt", "6", "--ds", "2", "--gap-sub", "0.01", "--gap-final", "0.001"],
    ["--mode", "monolithic", "--separation", "enumerate"],
    ["--mode", "td", "--sR", "0"],
    ["--mode", "td-r", "--separation", "filtering", "--rins", "--threads", "2"],
])
def test_solve_then_validate(tmp_path, flags, capsys):
    inst = gen(tmp_path)
    out = tmp_path / "sched.json"
    assert main(["solve", "--instance", str(inst), "--output", str(out), *flags]) == 0
    report = json.loads((tmp_path / "sched.json.report.json").read_text())
    assert report["header"]["version"] and report["header"]["flags"]["mode"] == flags[1]
    assert report["validation"]["feasible"]
    sched = json.loads(out.read_text())
    assert set(sched["objective_breakdown"]) >= {"production", "startup", "noload", "curtailment"}
    capsys.readouterr()
    assert main(["validate", "--instance", str(inst), "--schedule", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["violations"] == []


def test_tampered_schedule(tmp_path, capsys):
    inst = gen(tmp_path)
    out = tmp_path / "sched.json"
    assert main(["solve", "--instance", str(inst), "--output", str(out), "--mode", "monolithic"]) == 0
    doc = json.loads(out.read_text())
    gid = next(iter(doc["generators"]))
    doc["generators"][gid]["p"][0] += 500.0
    out.write_text(json.dumps(doc))
    capsys.readouterr()
    assert main(["validate", "--instance", str(inst), "--schedule", str(out)]) == 2
    assert json.loads(capsys.readouterr().out)["violations"]


def test_horizon_mismatch(tmp_path):
    inst12 = gen(tmp_path, "i12.json", T=12)
    inst6 = gen(tmp_path, "i6.json", T=6)
    out = tmp_path / "sched.json"
    assert main(["solve", "--instance", str(inst12), "--output", str(out), "--mode", "monolithic"]) == 0
    assert main(["validate", "--instance", str(inst6), "--schedule", str(out)]) == 65


def test_usage_and_file_errors(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["solve", "--instance", "x.json"])
    assert err.value.code == 64
    with pytest.raises(SystemExit) as err:
        main(["solve", "--instance", "x.json", "--output", "y", "--mode", "bogus"])
    assert err.value.code == 64
    assert main(["solve", "--instance", str(tmp_path / "missing.json"), "--output", str(tmp_path / "o.json")]) == 66
    assert main(["validate", "--instance", str(gen(tmp_path)), "--schedule", str(tmp_path / "none.json")]) == 66
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--instance", str(bad), "--output", str(tmp_path / "o.json")]) == 65


def test_infeasible_instance_exit_code(tmp_path):
    doc = json.loads(gen(tmp_path, T=4).read_text())
    # every unit must run at full output while demand is tiny
    for g in doc["generators"]:
        g.update(init_on=True, init_power=g["p_max"], p_min=g["p_max"], min_up=4, init_min_up_remaining=4)
        g["cost_segments"] = []
    for b in doc["demand"]:
        doc["demand"][b] = [0.0] * 4
    path = tmp_path / "inf.json"
    path.write_text(json.dumps(doc))
    assert main(["solve", "--instance", str(path), "--output", str(tmp_path / "o.json"), "--mode", "monolithic"]) == 2


def test_restart_reported(tmp_path):
    from relaxcut.instance import dump_instance
    path = tmp_path / "r.json"
    dump_instance(restart_instance(), path)
    assert main(["solve", "--instance", str(path), "--output", str(tmp_path / "o.json")]) == 0
    rep = json.loads((tmp_path / "o.json.report.json").read_text())
    assert rep["restarts"] == 1


def test_benchmark_rows_and_summary(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for s in range(3):
        gen(corpus, f"i{s}.json", seed=s, T=8)
    out = tmp_path / "bench"
    assert main(["benchmark", "--corpus", str(corpus), "--output", str(out),
                 "--methods", "monolithic:enumerate,td-r:dynamic"]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0].startswith("# ")
    rows = list(csv.DictReader(lines[1:]))
    body = [r for r in rows if r["instance"] != "avg."]
    assert len(body) == 6
    assert sum(r["instance"] == "avg." for r in rows) == 2
    ref = [r for r in body if r["method"] == "monolithic:enumerate"]
    assert all(float(r["gap_vs_best"]) == 0.0 for r in ref)
    assert (out / "benchmark_time.png").stat().st_size > 0
    assert (out / "benchmark_gap.png").stat().st_size > 0


def test_summary_is_geometric_mean():
    class R:
        def __init__(self, obj, t):
            self.schedule = type("S", (), {"objective": obj})()
            self.status, self.wall_seconds, self.cuts, self.subproblems, self.restarts = "ok", t, 0, 1, 0

    results = {"a": {"m": R(100.0, 1.0)}, "b": {"m": R(200.0, 100.0)}}
    rows = benchmark_rows(results, ["m"])
    avg = [r for r in rows if r["instance"] == "avg."][0]
    assert avg["wall_seconds"] == pytest.approx(10.0)


def test_figures(tmp_path):
    inst = gen(tmp_path)
    out = tmp_path / "s.json"
    assert main(["solve", "--instance", str(inst), "--output", str(out), "--mode", "monolithic", "--figures"]) == 0
    assert (tmp_path / "s.png").stat().st_size > 0
    rows = list(csv.reader(open(tmp_path / "s.dispatch.csv")))
    assert len(rows) == 1 + 12


def test_threads_do_not_change_result(tmp_path):
    inst = gen(tmp_path, seed=3)
    objs = []
    for th in ("1", "8"):
        out = tmp_path / f"s{th}.json"
        assert main(["solve", "--instance", str(inst), "--output", str(out), "--threads", th]) == 0
        doc = json.loads(out.read_text())
        objs.append((doc["objective"], json.dumps(doc["generators"], sort_keys=True)))
    assert objs[0] == objs[1]
