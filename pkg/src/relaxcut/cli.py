"""Command-line entry point: solve, validate, benchmark, generate."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .decomposition import DecompositionInfeasible, run_relax_and_cut
from .formulation import objective_breakdown, objective_value, schedule_from_values
from .generate import GenerationError, generate_instance
from .instance import InstanceError, dump_instance, load_instance
from .milp import SolveControls, Status
from .network import NetworkError, build_sensitivities
from .refine import rins_refine
from .schedule import Schedule, ScheduleError, read_schedule, write_schedule
from .separation import FilteringLimitError, solve_scuc
from .validate import ValidationError, check_schedule, gap_report

log = logging.getLogger("relaxcut")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INFEASIBLE = 2
EXIT_NO_INCUMBENT = 3
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_NOINPUT = 66

MODES = ("monolithic", "td", "td-r")
SEPARATIONS = ("dynamic", "filtering", "enumerate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"{v} is not a positive integer")
    return n


def _nonneg_int(v):
    n = int(v)
    if n < 0:
        raise argparse.ArgumentTypeError(f"{v} is negative")
    return n


def _fraction(v):
    x = float(v)
    if not 0 <= x < 1:
        raise argparse.ArgumentTypeError(f"{v} is not in [0, 1)")
    return x


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="td-r")
    p.add_argument("--separation", choices=SEPARATIONS, default="dynamic")
    p.add_argument("--sI", type=_positive_int, default=6, help="integer window length")
    p.add_argument("--sR", type=_nonneg_int, default=6, help="relaxed window length")
    p.add_argument("--dt", type=_positive_int, default=6, help="periods committed per subproblem")
    p.add_argument("--ds", type=_positive_int, default=2, help="integer window growth on restart")
    p.add_argument("--gap-sub", type=_fraction, default=0.01)
    p.add_argument("--gap-final", type=_fraction, default=0.001)
    p.add_argument("--time-limit", type=float, default=3600.0, help="seconds per run")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1, help="screening workers")
    p.add_argument("--rins", action="store_true", help="refine the result with sliding-window search")
    p.add_argument("--rins-window", type=_positive_int, default=12)
    p.add_argument("--rins-stride", type=_positive_int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ref-bus", default=None)
    p.add_argument("--backend", choices=("highs", "simplex"), default="highs", help="LP engine")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relaxcut", description="Security-constrained unit commitment with relax-and-cut.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--output", required=True, help="schedule JSON path")
    p.add_argument("--report", default=None, help="run report JSON (default: <output>.report.json)")
    p.add_argument("--figures", action="store_true", help="also write a schedule figure and dispatch CSV")
    _add_solver_flags(p)

    p = sub.add_parser("validate", help="check a schedule against every constraint")
    p.add_argument("--instance", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--output", default=None, help="write the report JSON here instead of stdout")
    p.add_argument("--ref-bus", default=None)

    p = sub.add_parser("benchmark", help="run a method matrix over a corpus directory")
    p.add_argument("--corpus", required=True, help="directory of instance JSON files")
    p.add_argument("--output", required=True, help="directory for results.csv and figures")
    p.add_argument("--methods", default="monolithic:enumerate,monolithic:dynamic,td:dynamic,td-r:dynamic",
                   help="comma list of mode:separation pairs")
    _add_solver_flags(p)

    p = sub.add_parser("generate", help="write a synthetic instance")
    p.add_argument("--buses", type=_positive_int, required=True)
    p.add_argument("--generators", type=_positive_int, required=True)
    p.add_argument("--lines", type=_positive_int, required=True)
    p.add_argument("--contingencies", type=_nonneg_int, required=True)
    p.add_argument("-T", "--horizon", type=_positive_int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--peak-demand", type=float, default=None)
    p.add_argument("--capacity-margin", type=float, default=1.3)
    p.add_argument("--output", required=True)
    return parser


def _header(args) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items())}
    return {"tool": "relaxcut", "version": __version__, "command": args.command,
            "seed": getattr(args, "seed", None), "flags": flags}


@dataclass
class RunResult:
    schedule: Schedule | None
    status: str
    exit_code: int
    wall_seconds: float
    cuts: int = 0
    subproblems: int = 0
    restarts: int = 0
    details: dict = field(default_factory=dict)


def run_method(instance, sens, args, mode: str, separation: str) -> RunResult:
    """One solve with the configured method; never raises for solver outcomes."""
    t0 = time.perf_counter()
    final = SolveControls(mip_gap=args.gap_final, time_limit=args.time_limit, backend=args.backend)
    sub = SolveControls(mip_gap=args.gap_sub, time_limit=args.time_limit, backend=args.backend)
    details: dict = {}
    try:
        if mode == "monolithic":
            model, res = solve_scuc(instance, sens, separation, final, args.threads)
            out = res.outcome
            details.update(mip_status=out.status.value, best_bound=out.best_bound, nodes=out.stats.nodes,
                           lp_solves=out.stats.lp_solves, rounds=res.rounds)
            if out.incumbent is None:
                code = EXIT_INFEASIBLE if out.status == Status.INFEASIBLE else EXIT_NO_INCUMBENT
                return RunResult(None, out.status.value, code, time.perf_counter() - t0, len(res.pool), 1, 0, details)
            vals = schedule_from_values(instance, model, out.incumbent)
            sched = Schedule.from_commitment(instance, vals["x"], vals["p"], vals["curtail"],
                                             ["monolithic"] * instance.horizon)
            cuts, subs, restarts = len(res.pool), 1, 0
            status = out.status.value
        else:
            s_R = 0 if mode == "td" else args.sR
            dt = args.sI if mode == "td" else args.dt
            sched, rep = run_relax_and_cut(instance, sens, args.sI, s_R, dt, args.ds, sub, separation, args.threads)
            details["subproblem_log"] = [r.log_line() for r in rep.subproblems]
            details["restart_s_I"] = rep.restarts
            cuts, subs, restarts = rep.cuts, len(rep.subproblems), len(rep.restarts)
            status = "ok"
    except DecompositionInfeasible as exc:
        rep = exc.report
        details["subproblem_log"] = [r.log_line() for r in rep.subproblems]
        details["error"] = str(exc)
        code = EXIT_NO_INCUMBENT if exc.timed_out else EXIT_INFEASIBLE
        return RunResult(None, "no-incumbent" if exc.timed_out else "infeasible", code,
                         time.perf_counter() - t0, rep.cuts, len(rep.subproblems), len(rep.restarts), details)
    except FilteringLimitError as exc:
        details["error"] = str(exc)
        return RunResult(None, "filtering-round-limit", EXIT_FAIL, time.perf_counter() - t0, len(exc.last.pool), 1, 0, details)

    if args.rins:
        left = max(args.time_limit - (time.perf_counter() - t0), 1e-3)
        ctl = SolveControls(mip_gap=args.gap_final, time_limit=left, backend=args.backend)
        sched, rr = rins_refine(instance, sens, sched, args.rins_window, args.rins_stride, ctl,
                                separation if separation != "enumerate" else "dynamic", args.threads)
        details["rins"] = {"passes": rr.passes, "truncated": rr.truncated,
                           "initial_objective": rr.initial_objective, "final_objective": rr.final_objective,
                           "trace": [[s.pass_no, s.start + 1, int(s.accepted), s.objective] for s in rr.steps]}
    sched.objective = objective_value(instance, sched)
    return RunResult(sched, status, EXIT_OK, time.perf_counter() - t0, cuts, subs, restarts, details)


def _load(path):
    try:
        return load_instance(path)
    except OSError as exc:
        raise _CliError(EXIT_NOINPUT, f"cannot read instance {path}: {exc.strerror or exc}") from exc
    except InstanceError as exc:
        raise _CliError(EXIT_DATA, f"invalid instance {path}: {exc}") from exc


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sens(instance, ref_bus):
    try:
        return build_sensitivities(instance, ref_bus)
    except (NetworkError, InstanceError, KeyError) as exc:
        raise _CliError(EXIT_USAGE, f"bad reference bus {ref_bus!r}: {exc}") from exc


def cmd_solve(args) -> int:
    instance = _load(args.instance)
    sens = _sens(instance, args.ref_bus)
    res = run_method(instance, sens, args, args.mode, args.separation)
    report = {"header": _header(args), "instance": instance.name, "status": res.status,
              "wall_seconds": res.wall_seconds, "cuts": res.cuts, "subproblems": res.subproblems,
              "restarts": res.restarts, **res.details}
    code = res.exit_code
    try:
        if res.schedule is not None:
            breakdown = objective_breakdown(instance, res.schedule)
            write_schedule(args.output, instance, res.schedule, breakdown)
            val = check_schedule(instance, sens, res.schedule)
            report.update(objective=res.schedule.objective, objective_breakdown=breakdown,
                          validation=val.to_dict())
            if not val.feasible:
                log.error("solver output failed validation (%d violations)", len(val.violations))
                code = EXIT_INFEASIBLE
            if args.figures:
                from .plots import plot_schedule
                stem = Path(args.output).with_suffix("")
                plot_schedule(instance, res.schedule, f"{stem}.png")
                _write_dispatch_csv(instance, res.schedule, f"{stem}.dispatch.csv")
        report_path = args.report or f"{args.output}.report.json"
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, default=_jsonable)
            fh.write("\n")
    except OSError as exc:
        raise _CliError(EXIT_NOINPUT, f"cannot write output: {exc}") from exc
    print(f"status={res.status} objective={report.get('objective', float('nan')):.6f} "
          f"wall={res.wall_seconds:.3f} cuts={res.cuts} subproblems={res.subproblems} restarts={res.restarts}")
    return code


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_dispatch_csv(instance, sched, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["period"] + [f"{g.id}_on" for g in instance.generators]
                    + [f"{g.id}_mw" for g in instance.generators] + ["curtailed_mw", "demand_mw"])
        for t in range(instance.horizon):
            wr.writerow([t + 1] + [int(v) for v in sched.x[:, t]] + [f"{v:.6f}" for v in sched.p[:, t]]
                        + [f"{sched.curtail[:, t].sum():.6f}", f"{instance.demand[:, t].sum():.6f}"])


def cmd_validate(args) -> int:
    instance = _load(args.instance)
    sens = _sens(instance, args.ref_bus)
    try:
        sched = read_schedule(args.schedule, instance)
    except OSError as exc:
        raise _CliError(EXIT_NOINPUT, f"cannot read schedule {args.schedule}: {exc.strerror or exc}") from exc
    except (ScheduleError, json.JSONDecodeError) as exc:
        raise _CliError(EXIT_DATA, f"invalid schedule {args.schedule}: {exc}") from exc
    try:
        rep = check_schedule(instance, sens, sched)
    except ValidationError as exc:
        raise _CliError(EXIT_DATA, f"dimension mismatch: {exc}") from exc
    text = rep.to_json()
    if args.output:
        try:
            Path(args.output).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise _CliError(EXIT_NOINPUT, f"cannot write report: {exc}") from exc
    else:
        print(text)
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


BENCH_FIELDS = ["instance", "method", "status", "objective", "gap_vs_best", "wall_seconds", "cuts",
                "subproblems", "restarts"]


def _parse_methods(spec: str) -> list[tuple[str, str]]:
    out = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        mode, _, sep = item.partition(":")
        sep = sep or "dynamic"
        if mode not in MODES or sep not in SEPARATIONS:
            raise _CliError(EXIT_USAGE, f"unknown method {item!r}; use mode:separation with mode in {MODES}")
        out.append((mode, sep))
    if not out:
        raise _CliError(EXIT_USAGE, "no methods given")
    return out


def benchmark_rows(results: dict, methods: list[str]) -> list[dict]:
    """Table rows with gaps and one summary row per method.

    ``results`` maps instance -> method -> RunResult.  The gap reference is
    the enumerated monolithic objective when available, else the best
    objective any method found.
    """
    rows = []
    for inst in sorted(results):
        by = results[inst]
        ref_run = by.get("monolithic:enumerate")
        ok = [r.schedule.objective for r in by.values() if r.schedule is not None]
        ref = ref_run.schedule.objective if ref_run is not None and ref_run.schedule is not None else (min(ok) if ok else None)
        for m in methods:
            r = by[m]
            obj = r.schedule.objective if r.schedule is not None else math.nan
            gap = gap_report(obj, ref) if r.schedule is not None and ref else math.nan
            rows.append({"instance": inst, "method": m, "status": "ok" if r.schedule is not None else r.status,
                         "objective": obj, "gap_vs_best": gap, "wall_seconds": r.wall_seconds, "cuts": r.cuts,
                         "subproblems": r.subproblems, "restarts": r.restarts})
    for m in methods:
        mine = [r for r in rows if r["method"] == m and r["status"] == "ok"]
        times = [max(r["wall_seconds"], 1e-9) for r in mine]
        gaps = [r["gap_vs_best"] for r in mine if not math.isnan(r["gap_vs_best"])]
        rows.append({"instance": "avg.", "method": m, "status": f"{len(mine)}/{len(results)} solved",
                     "objective": math.nan,
                     "gap_vs_best": float(np.mean(gaps)) if gaps else math.nan,
                     "wall_seconds": float(np.exp(np.mean(np.log(times)))) if times else math.nan,
                     "cuts": sum(r["cuts"] for r in mine), "subproblems": sum(r["subproblems"] for r in mine),
                     "restarts": sum(r["restarts"] for r in mine)})
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{round(v, 6) + 0.0:.6f}"
    return v


def cmd_benchmark(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise _CliError(EXIT_NOINPUT, f"corpus directory {corpus} not found")
    files = sorted(corpus.glob("*.json"))
    if not files:
        raise _CliError(EXIT_NOINPUT, f"no instance files in {corpus}")
    methods = _parse_methods(args.methods)
    names = [f"{m}:{s}" for m, s in methods]
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: dict = {}
    for f in files:
        try:
            instance = load_instance(f)
            sens = build_sensitivities(instance, args.ref_bus)
        except (OSError, InstanceError, NetworkError) as exc:
            log.error("skipping %s: %s", f.name, exc)
            continue
        results[instance.name] = {}
        for (mode, sep), name in zip(methods, names):
            try:
                r = run_method(instance, sens, args, mode, sep)
            except Exception as exc:  # noqa: BLE001 - one failed run must not stop the matrix
                log.error("%s %s failed: %s", instance.name, name, exc)
                r = RunResult(None, f"error: {type(exc).__name__}", EXIT_FAIL, math.nan)
            results[instance.name][name] = r
            log.info("instance=%s method=%s status=%s objective=%s wall=%.3f", instance.name, name, r.status,
                     r.schedule.objective if r.schedule is not None else "nan", r.wall_seconds)
    rows = benchmark_rows(results, names)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        fh.write("# " + json.dumps(_header(args), default=_jsonable) + "\n")
        wr = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt(r[k]) for k in BENCH_FIELDS})
    from .plots import plot_benchmark
    plot_benchmark(rows, str(out_dir))
    print(f"wrote {out_dir / 'results.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_generate(args) -> int:
    try:
        inst = generate_instance(args.buses, args.generators, args.lines, args.contingencies, args.horizon,
                                 args.seed, peak_demand=args.peak_demand, capacity_margin=args.capacity_margin)
    except GenerationError as exc:
        raise _CliError(EXIT_USAGE, str(exc)) from exc
    try:
        dump_instance(inst, args.output)
    except OSError as exc:
        raise _CliError(EXIT_NOINPUT, f"cannot write {args.output}: {exc}") from exc
    print(f"wrote {args.output} ({inst.name})")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "validate": cmd_validate, "benchmark": cmd_benchmark, "generate": cmd_generate}


def main(argv=None) -> int:
    level = os.environ.get("SCUC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _CliError as exc:
        print(f"relaxcut {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
