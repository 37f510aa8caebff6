"""DC power-flow sensitivities: PTDF, LODF and post-outage PTDF rows.

Flow convention: a positive flow on line ``l`` runs from ``from_bus`` to
``to_bus``.  A PTDF entry ``ptdf[l, b]`` is the flow on ``l`` caused by one
MW injected at ``b`` and withdrawn at the reference bus.
"""
from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

if TYPE_CHECKING:
    from .instance import Instance

__all__ = [
    "NetworkError",
    "SensitivitySet",
    "build_sensitivities",
    "contingency_ptdf_row",
    "line_flows",
    "bridge_lines",
    "is_connected",
    "BRIDGE_TOL",
    "BALANCE_TOL",
]

BRIDGE_TOL = 1e-8
BALANCE_TOL = 1e-6


class NetworkError(ValueError):
    pass


def is_connected(n_bus: int, frm: np.ndarray, to: np.ndarray) -> bool:
    if n_bus == 1:
        return True
    adj = sp.coo_matrix((np.ones(len(frm)), (frm, to)), shape=(n_bus, n_bus))
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def _ptdf_matrix(n_bus, frm, to, sus, ref):
    n_line = len(frm)
    inc = np.zeros((n_line, n_bus))
    inc[np.arange(n_line), frm] = 1.0
    inc[np.arange(n_line), to] = -1.0
    bbus = inc.T @ (sus[:, None] * inc)
    keep = np.array([b for b in range(n_bus) if b != ref], dtype=int)
    ptdf = np.zeros((n_line, n_bus))
    if keep.size == 0:
        return ptdf
    try:
        factor = scipy.linalg.cho_factor(bbus[np.ix_(keep, keep)])
    except np.linalg.LinAlgError as exc:
        raise NetworkError("reduced susceptance matrix is singular") from exc
    # theta_red = B_red^-1 * inj_red  ->  ptdf = diag(b) A_red B_red^-1
    ptdf[:, keep] = scipy.linalg.cho_solve(factor, (sus[:, None] * inc[:, keep]).T).T
    return ptdf


def _transfer_factors(ptdf, frm, to, lines):
    """PTDF of a unit from->to transfer across each line in ``lines``."""
    return ptdf[:, frm[lines]] - ptdf[:, to[lines]]


def bridge_lines(n_bus: int, frm: np.ndarray, to: np.ndarray, sus: np.ndarray) -> np.ndarray:
    """Indices of lines whose outage islands the network.

    A line is a bridge when its own transfer factor equals one, i.e. the
    whole transfer across it has no parallel path.
    """
    frm = np.asarray(frm, dtype=int)
    to = np.asarray(to, dtype=int)
    if not is_connected(n_bus, frm, to):
        raise NetworkError("network is not connected")
    ptdf = _ptdf_matrix(n_bus, frm, to, np.asarray(sus, dtype=float), 0)
    all_lines = np.arange(len(frm))
    self_factor = _transfer_factors(ptdf, frm, to, all_lines)[all_lines, all_lines]
    return np.flatnonzero(np.abs(1.0 - self_factor) < BRIDGE_TOL)


@dataclass(eq=False)
class SensitivitySet:
    reference_bus: str
    ref_index: int
    ptdf_base: np.ndarray  # (line, bus)
    lodf: np.ndarray  # (line, contingency): column c distributes the outaged line's flow
    outaged: np.ndarray  # (contingency,) outaged line index
    line_ids: tuple[str, ...]
    bus_ids: tuple[str, ...]
    contingency_ids: tuple[str, ...]
    _rows: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _cont_index: dict = field(default_factory=dict, repr=False)
    _line_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.ptdf_base.setflags(write=False)
        self.lodf.setflags(write=False)
        self._cont_index.update({c: i for i, c in enumerate(self.contingency_ids)})
        self._line_index.update({l: i for i, l in enumerate(self.line_ids)})

    @property
    def n_lines(self) -> int:
        return self.ptdf_base.shape[0]

    @property
    def n_contingencies(self) -> int:
        return len(self.contingency_ids)

    def cont_index(self, cont: str | None) -> int | None:
        if cont is None:
            return None
        try:
            return self._cont_index[cont]
        except KeyError:
            raise NetworkError(f"unknown contingency {cont!r}") from None

    def line_index(self, line: str) -> int:
        try:
            return self._line_index[line]
        except KeyError:
            raise NetworkError(f"unknown line {line!r}") from None

    def row(self, l: int, c: int | None) -> np.ndarray:
        """PTDF row of line ``l`` under contingency index ``c`` (cached)."""
        if c is None:
            return self.ptdf_base[l]
        k = self.outaged[c]
        if l == k:
            raise NetworkError(f"line {self.line_ids[l]} is the outaged line of contingency {self.contingency_ids[c]}")
        key = (l, c)
        row = self._rows.get(key)
        if row is None:
            row = self.ptdf_base[l] + self.lodf[l, c] * self.ptdf_base[k]
            row.setflags(write=False)
            with self._lock:
                row = self._rows.setdefault(key, row)
        return row

    def dump_ptdf_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["line", "bus", "value"])
            for l, lid in enumerate(self.line_ids):
                for b, bid in enumerate(self.bus_ids):
                    wr.writerow([lid, bid, f"{self.ptdf_base[l, b]:.12g}"])


def build_sensitivities(instance: Instance, reference_bus: str | None = None) -> SensitivitySet:
    """Base PTDF and LODF columns for every contingency of ``instance``."""
    ref_bus = instance.buses[0] if reference_bus is None else reference_bus
    ref = instance.bus_index(ref_bus)
    frm = np.array([instance.bus_index(ln.from_bus) for ln in instance.lines], dtype=int)
    to = np.array([instance.bus_index(ln.to_bus) for ln in instance.lines], dtype=int)
    sus = np.array([ln.susceptance for ln in instance.lines], dtype=float)
    if (sus <= 0).any():
        raise NetworkError("susceptances must be positive")
    if not is_connected(instance.n_buses, frm, to):
        raise NetworkError("base network is disconnected")
    ptdf = _ptdf_matrix(instance.n_buses, frm, to, sus, ref)

    outaged = np.array([instance.line_index(c.outaged_line) for c in instance.contingencies], dtype=int)
    lodf = np.zeros((len(instance.lines), len(outaged)))
    if outaged.size:
        transfer = _transfer_factors(ptdf, frm, to, outaged)
        denom = 1.0 - transfer[outaged, np.arange(len(outaged))]
        if (np.abs(denom) < BRIDGE_TOL).any():
            bad = instance.contingencies[int(np.flatnonzero(np.abs(denom) < BRIDGE_TOL)[0])]
            raise NetworkError(f"contingency {bad.id} outages a bridge line")
        lodf = transfer / denom
        lodf[outaged, np.arange(len(outaged))] = -1.0
    return SensitivitySet(
        reference_bus=ref_bus,
        ref_index=ref,
        ptdf_base=ptdf,
        lodf=lodf,
        outaged=outaged,
        line_ids=tuple(ln.id for ln in instance.lines),
        bus_ids=instance.buses,
        contingency_ids=tuple(c.id for c in instance.contingencies),
    )


def contingency_ptdf_row(s: SensitivitySet, line: str, contingency: str | None) -> np.ndarray:
    return s.row(s.line_index(line), s.cont_index(contingency))


def line_flows(s: SensitivitySet, injections, contingency: str | None = None) -> np.ndarray:
    """Line flows (MW) for a balanced bus injection vector.

    ``injections`` may also be a (bus, period) matrix, in which case a
    (line, period) matrix is returned.  Under a contingency the outaged
    line carries zero flow.
    """
    inj = np.asarray(injections, dtype=float)
    imbalance = np.abs(inj.sum(axis=0))
    if np.any(imbalance > BALANCE_TOL):
        raise NetworkError(f"injections unbalanced by {float(np.max(imbalance)):.3g} MW")
    flows = s.ptdf_base @ inj
    c = s.cont_index(contingency)
    if c is None:
        return flows
    k = s.outaged[c]
    post = flows + np.multiply.outer(s.lodf[:, c], flows[k]) if flows.ndim == 2 else flows + s.lodf[:, c] * flows[k]
    post[k] = 0.0
    return post
