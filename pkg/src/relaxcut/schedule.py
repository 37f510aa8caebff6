"""Commitment/dispatch schedules and their JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance

__all__ = ["Schedule", "ScheduleError", "schedule_to_dict", "schedule_from_dict", "startup_shutdown"]


class ScheduleError(ValueError):
    pass


def startup_shutdown(x: np.ndarray, x0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start-up and shut-down indicators implied by commitments ``x``.

    ``x0`` is the commitment just before the first column of ``x``.
    """
    prev = np.concatenate([np.asarray(x0, dtype=int)[:, None], x[:, :-1]], axis=1)
    diff = x.astype(int) - prev
    return (diff > 0).astype(np.int8), (diff < 0).astype(np.int8)


@dataclass
class Schedule:
    x: np.ndarray  # (gen, period) 0/1
    p: np.ndarray  # (gen, period) MW
    curtail: np.ndarray  # (bus, period) MW
    z: np.ndarray | None = None
    w: np.ndarray | None = None
    provenance: list[str] = field(default_factory=list)
    objective: float | None = None

    @classmethod
    def from_commitment(cls, instance: Instance, x, p, curtail, provenance=None) -> "Schedule":
        """Build a schedule, deriving start-ups/shut-downs from ``x``."""
        x = np.asarray(np.rint(x), dtype=np.int8)
        x0 = np.array([g.init_on for g in instance.generators], dtype=int)
        z, w = startup_shutdown(x, x0)
        return cls(x=x, p=np.asarray(p, dtype=float), curtail=np.asarray(curtail, dtype=float),
                   z=z, w=w, provenance=list(provenance or []))

    @property
    def horizon(self) -> int:
        return self.x.shape[1]

    def check_dimensions(self, instance: Instance) -> None:
        g, t, b = len(instance.generators), instance.horizon, instance.n_buses
        shapes = {"x": (g, t), "p": (g, t), "curtail": (b, t)}
        if self.z is not None:
            shapes["z"] = (g, t)
        if self.w is not None:
            shapes["w"] = (g, t)
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ScheduleError(f"dimension mismatch: {name} has shape {got}, instance needs {want}")

    def copy(self) -> "Schedule":
        return Schedule(
            x=self.x.copy(), p=self.p.copy(), curtail=self.curtail.copy(),
            z=None if self.z is None else self.z.copy(),
            w=None if self.w is None else self.w.copy(),
            provenance=list(self.provenance), objective=self.objective,
        )


def schedule_to_dict(instance: Instance, schedule: Schedule, breakdown: dict | None = None) -> dict:
    doc = {
        "instance": instance.name,
        "horizon": schedule.horizon,
        "generators": {
            g.id: {
                "x": [int(v) for v in schedule.x[i]],
                "p": [float(v) for v in schedule.p[i]],
            }
            for i, g in enumerate(instance.generators)
        },
        "curtailment": {b: [float(v) for v in schedule.curtail[i]] for i, b in enumerate(instance.buses)},
        "provenance": list(schedule.provenance),
    }
    if schedule.objective is not None:
        doc["objective"] = float(schedule.objective)
    if breakdown is not None:
        doc["objective_breakdown"] = {k: float(v) for k, v in breakdown.items()}
    return doc


def schedule_from_dict(instance: Instance, doc: dict) -> Schedule:
    try:
        gens = doc["generators"]
        x = np.array([gens[g.id]["x"] for g in instance.generators], dtype=float)
        p = np.array([gens[g.id]["p"] for g in instance.generators], dtype=float)
        cur = doc.get("curtailment", {})
        curtail = np.array([cur.get(b, [0.0] * x.shape[1]) for b in instance.buses], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScheduleError(f"malformed schedule document: {exc}") from exc
    if x.ndim != 2 or p.shape != x.shape or curtail.ndim != 2 or curtail.shape[1] != x.shape[1]:
        raise ScheduleError("dimension mismatch: ragged schedule arrays")
    if len(instance.generators) == 0:
        x = np.zeros((0, instance.horizon))
        p = np.zeros((0, instance.horizon))
    sched = Schedule(x=x, p=p, curtail=curtail, provenance=list(doc.get("provenance", [])),
                     objective=doc.get("objective"))
    x0 = np.array([g.init_on for g in instance.generators], dtype=int)
    if x.shape[1] == instance.horizon:
        sched.z, sched.w = startup_shutdown(np.rint(x).astype(int), x0)
    return sched


def write_schedule(path, instance: Instance, schedule: Schedule, breakdown: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schedule_to_dict(instance, schedule, breakdown), fh, indent=1)
        fh.write("\n")


def read_schedule(path, instance: Instance) -> Schedule:
    with open(path, encoding="utf-8") as fh:
        return schedule_from_dict(instance, json.load(fh))
