"""Flexibility-minimizing OPF per scenario and chance-constrained aggregation.

For every (scenario, timestep) the LP

    minimize    sum_b  f_b^+ + f_b^-
    subject to  linearized branch flow with loads  p_b - f_b^+ + f_b^-
                v_min^2 <= v^2 <= v_max^2          at every bus
                thermal limits                      at every branch and the transformer
                f^+, f^- >= 0                       at flexible buses only

is solved with HiGHS. Positive net flexibility ``f = f^+ - f^-`` is load
reduction (or extra injection); negative is curtailment (or extra consumption).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from scipy.optimize import linprog

from .network import NetworkModel
from .powerflow import branch_limits_kva, linearized_flow, violation_mask, voltage_drop_coefficients
from .scenarios import ScenarioSet

ThermalModel = Literal["exact", "octagon"]

ZERO_KW = 1e-9  # flexibility below this is solver dust
FEAS_TOL = 1e-9
TIEBREAK = 1e-6  # relative objective perturbation ordering otherwise-equal buses


class InfeasibleError(RuntimeError):
    """Limits cannot be met even with unlimited flexibility."""


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ScenarioSolve:
    """LP result for one load profile; ``flex`` is (T, n_bus), NaN at infeasible timesteps."""

    scenario: int
    flex: np.ndarray
    feasible: np.ndarray
    objective: np.ndarray
    binding: dict[int, tuple[str, ...]] = field(default_factory=dict)

    @property
    def all_feasible(self) -> bool:
        return bool(self.feasible.all())


@dataclass(frozen=True, eq=False)
class FlexNeeds:
    """Signed flexibility per (timestep, bus) in kW.

    ``up_kw``/``down_kw`` keep both directions when retained scenarios disagree
    in sign; ``values`` is the one with the larger magnitude, signed.
    """

    bus_ids: tuple[str, ...]
    values: np.ndarray
    kind: Literal["predicted", "actual"]
    risk_level: float = 0.0
    up_kw: np.ndarray | None = None
    down_kw: np.ndarray | None = None
    n_scenarios: int = 1
    discarded: int = 0
    retained: np.ndarray | None = None  # (T, S) mask of scenarios in the envelope
    infeasible: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("flexibility values must be finite")
        if self.up_kw is None:
            object.__setattr__(self, "up_kw", np.maximum(self.values, 0.0))
        if self.down_kw is None:
            object.__setattr__(self, "down_kw", np.maximum(-self.values, 0.0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def temporal_kw(self) -> np.ndarray:
        """Total up + down magnitude per timestep."""
        return (self.up_kw + self.down_kw).sum(axis=1)

    def locational_kw(self) -> np.ndarray:
        return (self.up_kw + self.down_kw).sum(axis=0)


@dataclass(frozen=True, eq=False)
class _LpData:
    flex_idx: np.ndarray
    flow_sens: np.ndarray  # (m, k): branch P decrease per kW of f
    volt_sens: np.ndarray  # (n, k): v^2 increase per kW of f
    a_r: np.ndarray
    a_x: np.ndarray
    s_lim: np.ndarray
    tr_lim: float
    vmin2: np.ndarray
    vmax2: np.ndarray
    monitored: np.ndarray  # non-root bus indices
    cost: np.ndarray


@lru_cache(maxsize=16)
def _lp_data(net: NetworkModel) -> _LpData:
    topo = net.topology
    flex_idx = np.array([i for i, b in enumerate(net.buses) if b.is_flexible], dtype=int)
    a_r, a_x = voltage_drop_coefficients(net)
    flow_sens = topo.down[:, flex_idx]
    volt_sens = topo.down.T @ (a_r[:, None] * flow_sens)
    # prefer buses early in BFS order when the total is otherwise tied
    rank = np.empty(len(net.buses))
    rank[topo.order] = np.arange(len(net.buses))
    k = len(flex_idx)
    tb = 1.0 + TIEBREAK * rank[flex_idx] / max(len(net.buses), 1)
    monitored = np.array([i for i in range(len(net.buses)) if i != topo.root], dtype=int)
    return _LpData(
        flex_idx=flex_idx,
        flow_sens=flow_sens,
        volt_sens=volt_sens,
        a_r=a_r,
        a_x=a_x,
        s_lim=branch_limits_kva(net),
        tr_lim=net.transformer.s_limit_kva,
        vmin2=np.array([b.v_min_pu for b in net.buses]) ** 2,
        vmax2=np.array([b.v_max_pu for b in net.buses]) ** 2,
        monitored=monitored,
        cost=np.concatenate([tb, tb]) if k else np.zeros(0),
    )


def _constraints(
    net: NetworkModel, lp: _LpData, p: np.ndarray, q: np.ndarray, thermal: ThermalModel
) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """Rows ``G f <= h`` in the net flexibility f (k,), plus labels.

    Also returns constant constraints that no active-power flexibility can fix.
    """
    topo = net.topology
    pf = topo.down @ p
    qf = topo.down @ q
    w0 = 1.0 - (lp.a_r * pf + lp.a_x * qf) @ topo.down
    mon = lp.monitored
    k = len(lp.flex_idx)
    rows: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    labels: list[str] = []
    fixed: list[str] = []

    rows += [-lp.volt_sens[mon], lp.volt_sens[mon]]
    rhs += [w0[mon] - lp.vmin2[mon], lp.vmax2[mon] - w0[mon]]
    labels += [f"undervoltage:{net.buses[i].id}" for i in mon]
    labels += [f"overvoltage:{net.buses[i].id}" for i in mon]

    ones = np.ones((1, k))
    p_tr, q_tr = np.array([p.sum()]), np.array([q.sum()])
    elements = [
        (lp.flow_sens, pf, qf, lp.s_lim, [br.id for br in net.branches]),
        (ones, p_tr, q_tr, np.array([lp.tr_lim]), [net.transformer.id]),
    ]
    for sens, p0, q0, s_lim, ids in elements:
        if thermal == "exact":
            # Q is untouched by flexibility, so |S| <= S_lim is |P| <= sqrt(S_lim^2 - Q^2)
            room = s_lim**2 - q0**2
            fixed += [f"thermal:{i} (reactive flow alone exceeds limit)" for i in np.asarray(ids)[room < 0]]
            p_lim = np.sqrt(np.maximum(room, 0.0))
            rows += [sens, -sens]
            rhs += [p0 + p_lim, p_lim - p0]
            labels += [f"thermal:{i}" for i in ids] * 2
        else:
            for theta in (0.0, math.pi / 4, 3 * math.pi / 4):
                c, s = math.cos(theta), math.sin(theta)
                rows += [-c * sens, c * sens]
                rhs += [s_lim - c * p0 - s * q0, s_lim + c * p0 + s * q0]
                labels += [f"thermal:{i}" for i in ids] * 2
            fixed += [f"thermal:{i} (reactive flow alone exceeds limit)" for i in np.asarray(ids)[np.abs(q0) > s_lim]]
    return np.vstack(rows), np.concatenate(rhs), labels, fixed


def _solve_one(
    net: NetworkModel, lp: _LpData, p: np.ndarray, q: np.ndarray, thermal: ThermalModel, max_iter: int
) -> tuple[np.ndarray | None, tuple[str, ...]]:
    G, h, labels, fixed = _constraints(net, lp, p, q, thermal)
    if fixed:
        return None, tuple(fixed)
    k = len(lp.flex_idx)
    if np.all(h >= -FEAS_TOL):
        return np.zeros(k), ()
    if k == 0:
        return None, tuple(sorted({labels[i] for i in np.flatnonzero(h < -FEAS_TOL)}))
    A = np.hstack([G, -G])
    res = linprog(lp.cost, A_ub=A, b_ub=h, bounds=(0, None), method="highs", options={"maxiter": max_iter})
    if res.status == 0:
        f = res.x[:k] - res.x[k:]
        f[np.abs(f) < ZERO_KW] = 0.0
        return f, ()
    if res.status == 2:
        return None, _elastic_diagnosis(A, h, labels)
    raise SolverError(f"LP solver stopped: {res.message}")


def _elastic_diagnosis(A: np.ndarray, h: np.ndarray, labels: list[str]) -> tuple[str, ...]:
    """Constraints that need slack in the minimum-total-violation relaxation."""
    n_rows, n_var = A.shape
    A_el = np.hstack([A, -np.eye(n_rows)])
    c = np.concatenate([np.zeros(n_var), np.ones(n_rows)])
    res = linprog(c, A_ub=A_el, b_ub=h, bounds=(0, None), method="highs")
    if res.status != 0:
        return ("unknown",)
    slack = res.x[n_var:]
    return tuple(sorted({labels[i] for i in np.flatnonzero(slack > 1e-7)}))


def solve_scenario_opf(
    net: NetworkModel,
    p_load: np.ndarray,
    q_load: np.ndarray | None = None,
    scenario: int = 0,
    thermal: ThermalModel = "exact",
    max_iter: int = 10_000,
) -> ScenarioSolve:
    """Solve the flexibility LP independently at every timestep of a (T, n_bus) profile."""
    p = np.atleast_2d(np.asarray(p_load, dtype=float))
    q = np.zeros_like(p) if q_load is None else np.atleast_2d(np.asarray(q_load, dtype=float))
    if p.shape != q.shape or p.shape[1] != len(net.buses):
        raise ValueError(f"load arrays must be (T, {len(net.buses)}), got {p.shape} and {q.shape}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise ValueError("loads must be finite")
    if thermal not in ("exact", "octagon"):
        raise ValueError(f"unknown thermal model {thermal!r}")
    lp = _lp_data(net)
    T, n = p.shape
    flex = np.zeros((T, n))
    feasible = np.ones(T, dtype=bool)
    binding: dict[int, tuple[str, ...]] = {}
    for t in range(T):
        f, why = _solve_one(net, lp, p[t], q[t], thermal, max_iter)
        if f is None:
            feasible[t] = False
            flex[t] = np.nan
            binding[t] = why
        else:
            flex[t, lp.flex_idx] = f
    objective = np.where(feasible, np.abs(np.nan_to_num(flex)).sum(axis=1), np.nan)
    return ScenarioSolve(scenario, flex, feasible, objective, binding)


def scenario_bus_loads(net: NetworkModel, scen: ScenarioSet) -> tuple[np.ndarray, np.ndarray]:
    """Scatter (S, T, L) scenario loads onto (S, T, n_bus) arrays."""
    idx = [net.bus_index[b] for b in scen.bus_ids]
    S, T, _ = scen.p_kw.shape
    p = np.zeros((S, T, len(net.buses)))
    q = np.zeros_like(p)
    p[:, :, idx] = scen.p_kw
    q[:, :, idx] = scen.q_kvar
    return p, q


def _solve_chunk(args: tuple) -> list[ScenarioSolve]:
    net, p, q, first, thermal = args
    return [solve_scenario_opf(net, p[i], q[i], first + i, thermal) for i in range(len(p))]


def solve_scenarios(
    net: NetworkModel,
    p_load: np.ndarray,
    q_load: np.ndarray,
    workers: int = 1,
    thermal: ThermalModel = "exact",
) -> list[ScenarioSolve]:
    """Solve all (S, T, n_bus) scenarios; output order and values do not depend on ``workers``."""
    S = p_load.shape[0]
    if workers <= 1 or S < 2:
        return _solve_chunk((net, p_load, q_load, 0, thermal))
    bounds = np.linspace(0, S, min(workers, S) * 4 + 1).astype(int)
    chunks = [
        (net, p_load[a:b], q_load[a:b], int(a), thermal) for a, b in zip(bounds[:-1], bounds[1:]) if b > a
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_solve_chunk, chunks))
    return [s for part in parts for s in part]


def discard_count(risk_level: float, n_scenarios: int) -> int:
    # guard against 0.7 * 200 = 139.999...
    return int(math.floor(risk_level * n_scenarios + 1e-9))


def aggregate_chance_constrained(
    solves: Sequence[ScenarioSolve], risk_level: float, bus_ids: Sequence[str] | None = None
) -> FlexNeeds:
    """Per timestep, drop the floor(eps*S) scenarios with the largest total need
    and take the signed largest-magnitude need per bus over the rest.

    Infeasible scenarios rank as worst. Ties in total need are broken by
    scenario index, so retained sets are nested as ``risk_level`` grows.
    """
    if not solves:
        raise ValueError("no scenario solves to aggregate")
    if not 0 <= risk_level < 1:
        raise ValueError(f"risk level must be in [0, 1), got {risk_level}")
    S = len(solves)
    T, n = solves[0].flex.shape
    k = discard_count(risk_level, S)
    flex = np.stack([s.flex for s in solves])  # (S, T, n)
    feas = np.stack([s.feasible for s in solves])  # (S, T)
    totals = np.where(feas, np.abs(np.nan_to_num(flex)).sum(axis=2), np.inf)
    idx = np.arange(S)
    up = np.zeros((T, n))
    down = np.zeros((T, n))
    retained = np.zeros((T, S), dtype=bool)
    infeasible: dict[int, tuple[int, ...]] = {}
    for t in range(T):
        order = np.lexsort((idx, -totals[:, t]))
        keep = order[k:]
        retained[t, keep] = True
        bad = tuple(int(s) for s in idx[~feas[:, t]])
        if bad:
            infeasible[t] = bad
        use = keep[feas[keep, t]]
        if len(use) == 0:
            raise InfeasibleError(f"all retained scenarios infeasible at timestep {t}")
        ft = flex[use, t, :]
        up[t] = np.maximum(ft.max(axis=0), 0.0)
        down[t] = np.maximum(-ft.min(axis=0), 0.0)
    values = np.where(up >= down, up, -down)
    ids = tuple(bus_ids) if bus_ids is not None else tuple(str(i) for i in range(n))
    return FlexNeeds(
        bus_ids=ids,
        values=values,
        kind="predicted",
        risk_level=float(risk_level),
        up_kw=up,
        down_kw=down,
        n_scenarios=S,
        discarded=k,
        retained=retained,
        infeasible=infeasible,
    )


def compute_actual_flex(
    net: NetworkModel, p_load: np.ndarray, q_load: np.ndarray | None = None, thermal: ThermalModel = "exact"
) -> FlexNeeds:
    """Flexibility that the realized loads actually required."""
    sol = solve_scenario_opf(net, p_load, q_load, thermal=thermal)
    if not sol.all_feasible:
        t = int(np.flatnonzero(~sol.feasible)[0])
        raise InfeasibleError(f"realized loads infeasible at timestep {t}: {', '.join(sol.binding[t])}")
    return FlexNeeds(tuple(net.bus_ids), sol.flex, kind="actual")


def post_correction_pass(
    net: NetworkModel, p_load: np.ndarray, q_load: np.ndarray, pred: FlexNeeds, tol: float = 1e-6
) -> np.ndarray:
    """(S, T) mask: scenario is violation-free under the linearized model after
    subtracting the predicted flexibility from its loads."""
    corrected = p_load - pred.values[None, :, :]
    op = linearized_flow(net, corrected, q_load)
    return ~violation_mask(op, net, tol)
