"""Power flow on radial networks and limit-violation (DNI) detection.

Two evaluators share one array layout: loads are ``(..., n_bus)`` arrays in
``net.buses`` order, positive = consumption, in kW / kvar. Any leading axes
(timesteps, scenarios) are carried through unchanged.

* :func:`linearized_flow` - lossless branch-flow model with squared-voltage
  drops (the model embedded in the flexibility LP).
* :func:`sweep_flow` - exact backward/forward sweep with losses, used as the
  reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np

from .network import NetworkModel

Kind = Literal["overvoltage", "undervoltage", "thermal"]


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    bus_ids: tuple[str, ...]
    branch_ids: tuple[str, ...]
    v_pu: np.ndarray
    p_kw: np.ndarray
    q_kvar: np.ndarray
    s_kva: np.ndarray
    transformer_p_kw: np.ndarray
    transformer_q_kvar: np.ndarray
    losses_kw: np.ndarray
    model: str = "linear"
    converged: bool = True
    iterations: int = 0

    @property
    def transformer_s_kva(self) -> np.ndarray:
        return np.hypot(self.transformer_p_kw, self.transformer_q_kvar)


@dataclass(frozen=True)
class Violation:
    timestep: int
    element: str
    kind: Kind
    magnitude: float


@dataclass(frozen=True)
class DniReport:
    entries: tuple[Violation, ...] = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def timesteps(self) -> set[int]:
        return {v.timestep for v in self.entries}


def bus_array(net: NetworkModel, values: Mapping[str, float] | np.ndarray | None) -> np.ndarray:
    """Accept a bus-id mapping or an array already in bus order."""
    if values is None:
        return np.zeros(len(net.buses))
    if isinstance(values, Mapping):
        out = np.zeros(len(net.buses))
        for bus, v in values.items():
            out[net.bus_index[bus]] = v
        return out
    arr = np.asarray(values, dtype=float)
    if arr.shape[-1] != len(net.buses):
        raise ValueError(f"load array last axis {arr.shape[-1]} != {len(net.buses)} buses")
    return arr


def branch_base_voltage(net: NetworkModel) -> np.ndarray:
    """Nominal voltage (V) at the sending end of each branch."""
    return np.array([net.bus(br.from_bus).nominal_voltage for br in net.branches])


def branch_limits_kva(net: NetworkModel) -> np.ndarray:
    """Thermal limit in kVA: ampacity x loading fraction x nominal voltage."""
    amps = np.array([br.current_limit for br in net.branches])
    return amps * branch_base_voltage(net) / 1000.0


def branch_ratings_kva(net: NetworkModel) -> np.ndarray:
    amps = np.array([br.rating for br in net.branches])
    return amps * branch_base_voltage(net) / 1000.0


def voltage_drop_coefficients(net: NetworkModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-branch (a_r, a_x) with v_to^2 = v_from^2 - a_r*P - a_x*Q for P, Q in kW/kvar."""
    vb2 = branch_base_voltage(net) ** 2
    r = np.array([br.r for br in net.branches])
    x = np.array([br.x for br in net.branches])
    return 2000.0 * r / vb2, 2000.0 * x / vb2


def linearized_flow(
    net: NetworkModel,
    p_load: Mapping[str, float] | np.ndarray | None,
    q_load: Mapping[str, float] | np.ndarray | None = None,
) -> OperatingPoint:
    topo = net.topology
    p = bus_array(net, p_load)
    q = np.zeros_like(p) if q_load is None else np.broadcast_to(bus_array(net, q_load), p.shape)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise ValueError("loads must be finite")
    pf = p @ topo.down.T
    qf = q @ topo.down.T
    a_r, a_x = voltage_drop_coefficients(net)
    w = 1.0 - (a_r * pf + a_x * qf) @ topo.down
    return OperatingPoint(
        bus_ids=tuple(net.bus_ids),
        branch_ids=tuple(net.branch_ids),
        v_pu=np.sqrt(np.maximum(w, 0.0)),
        p_kw=pf,
        q_kvar=qf,
        s_kva=np.hypot(pf, qf),
        transformer_p_kw=p.sum(axis=-1),
        transformer_q_kvar=q.sum(axis=-1),
        losses_kw=np.zeros(p.shape[:-1]),
        model="linear",
    )


def sweep_flow(
    net: NetworkModel,
    p_load: Mapping[str, float] | np.ndarray | None,
    q_load: Mapping[str, float] | np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> OperatingPoint:
    """Current-summation backward/forward sweep in per unit.

    Stops when the largest complex voltage update falls below ``tol``. On
    non-convergence the last iterate is returned with ``converged=False``.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    topo = net.topology
    p = bus_array(net, p_load)
    q = np.zeros_like(p) if q_load is None else np.broadcast_to(bus_array(net, q_load), p.shape)
    s_base = net.base_power * 1000.0
    vb = branch_base_voltage(net)
    z = np.array([complex(br.r, br.x) for br in net.branches]) * s_base / vb**2
    s = (p + 1j * q) * 1000.0 / s_base

    v = np.ones(p.shape, dtype=complex)
    converged = False
    it = 0
    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            i_load = np.conj(s / v)
            i_br = i_load @ topo.down.T
            v_new = 1.0 - (i_br * z) @ topo.down
            delta = np.max(np.abs(v_new - v), initial=0.0)
            v = v_new
            if not np.isfinite(delta):
                break
            if delta < tol:
                converged = True
                break
        i_load = np.conj(s / v)
        i_br = i_load @ topo.down.T
        s_send = v[..., topo.branch_from] * np.conj(i_br) * s_base / 1000.0
        losses = (np.abs(i_br) ** 2 * z.real).sum(axis=-1) * s_base / 1000.0
        # root voltage is 1 pu, so supply = conj(total current drawn)
        s_root = np.conj(i_load.sum(axis=-1)) * s_base / 1000.0
    return OperatingPoint(
        bus_ids=tuple(net.bus_ids),
        branch_ids=tuple(net.branch_ids),
        v_pu=np.abs(v),
        p_kw=s_send.real,
        q_kvar=s_send.imag,
        s_kva=np.hypot(s_send.real, s_send.imag),
        transformer_p_kw=s_root.real,
        transformer_q_kvar=s_root.imag,
        losses_kw=losses,
        model="sweep",
        converged=converged,
        iterations=it,
    )


def loading_percent(op: OperatingPoint, net: NetworkModel) -> np.ndarray:
    """Apparent branch flow as % of the full (untightened) rating."""
    return op.s_kva / branch_ratings_kva(net) * 100.0


def detect_dni(op: OperatingPoint, net: NetworkModel, tol: float = 1e-6) -> DniReport:
    """List voltage-band and thermal violations (transformer included).

    ``tol`` absorbs solver round-off: a value counts as violating only when it
    exceeds its limit by more than ``tol`` (pu for voltage, kVA for flow).
    """
    v = np.atleast_2d(op.v_pu)
    s = np.atleast_2d(op.s_kva)
    s_tr = np.atleast_1d(op.transformer_s_kva)
    vmin = np.array([b.v_min_pu for b in net.buses])
    vmax = np.array([b.v_max_pu for b in net.buses])
    s_lim = branch_limits_kva(net)
    tr_lim = net.transformer.s_limit_kva
    entries: list[Violation] = []
    for t in range(v.shape[0]):
        for j in np.flatnonzero(v[t] < vmin - tol):
            entries.append(Violation(t, op.bus_ids[j], "undervoltage", float(vmin[j] - v[t, j])))
        for j in np.flatnonzero(v[t] > vmax + tol):
            entries.append(Violation(t, op.bus_ids[j], "overvoltage", float(v[t, j] - vmax[j])))
        for e in np.flatnonzero(s[t] > s_lim + tol):
            entries.append(Violation(t, op.branch_ids[e], "thermal", float(s[t, e] - s_lim[e])))
        if s_tr[t] > tr_lim + tol:
            entries.append(Violation(t, net.transformer.id, "thermal", float(s_tr[t] - tr_lim)))
    return DniReport(tuple(entries))


def violation_mask(op: OperatingPoint, net: NetworkModel, tol: float = 1e-6) -> np.ndarray:
    """Boolean over the leading axes of ``op``: any limit violated in that snapshot."""
    vmin = np.array([b.v_min_pu for b in net.buses])
    vmax = np.array([b.v_max_pu for b in net.buses])
    bad = np.any(op.v_pu < vmin - tol, axis=-1) | np.any(op.v_pu > vmax + tol, axis=-1)
    bad |= np.any(op.s_kva > branch_limits_kva(net) + tol, axis=-1)
    bad |= op.transformer_s_kva > net.transformer.s_limit_kva + tol
    return bad
