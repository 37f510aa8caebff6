"""Figures for benchmark tables and schedules (written to files, never shown)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_benchmark", "plot_schedule"]


def _grouped_bars(ax, instances, methods, values, ylabel, log=False):
    width = 0.8 / max(1, len(methods))
    xs = np.arange(len(instances))
    for k, m in enumerate(methods):
        ys = [values.get((i, m), np.nan) for i in instances]
        ax.bar(xs + k * width - 0.4 + width / 2, ys, width, label=m)
    ax.set_xticks(xs)
    ax.set_xticklabels(instances, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    if log:
        ax.set_yscale("log")
    ax.grid(axis="y", alpha=0.3)


def plot_benchmark(rows: list[dict], out_dir) -> list[str]:
    """Wall time and gap per (instance, method); returns the written paths."""
    rows = [r for r in rows if r["instance"] != "avg." and r.get("status") == "ok"]
    instances = sorted({r["instance"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    times = {(r["instance"], r["method"]): r["wall_seconds"] for r in rows}
    gaps = {(r["instance"], r["method"]): 100.0 * r["gap_vs_best"] for r in rows}
    paths = []
    for name, vals, label, log in (("benchmark_time.png", times, "wall time [s]", True),
                                   ("benchmark_gap.png", gaps, "gap vs reference [%]", False)):
        fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(instances) + 3), 4))
        _grouped_bars(ax, instances, methods, vals, label, log)
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        path = f"{out_dir}/{name}"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_schedule(instance, schedule, path) -> str:
    """Commitment map (top) and stacked dispatch with demand (bottom)."""
    T = instance.horizon
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True,
                                 gridspec_kw={"height_ratios": [1, 2]})
    a1.imshow(schedule.x, aspect="auto", cmap="Greys", vmin=0, vmax=1,
              extent=(0.5, T + 0.5, len(instance.generators) - 0.5, -0.5), interpolation="nearest")
    a1.set_yticks(range(len(instance.generators)))
    a1.set_yticklabels([g.id for g in instance.generators], fontsize=7)
    a1.set_ylabel("unit on")
    t = np.arange(1, T + 1)
    a2.stackplot(t, schedule.p, labels=[g.id for g in instance.generators], step="mid", alpha=0.85)
    a2.step(t, instance.demand.sum(axis=0), where="mid", color="k", lw=1.5, label="demand")
    if schedule.curtail.sum() > 1e-6:
        a2.step(t, schedule.curtail.sum(axis=0), where="mid", color="r", lw=1, ls="--", label="curtailed")
    a2.set_xlabel("period")
    a2.set_ylabel("MW")
    a2.legend(fontsize=6, ncol=4, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
