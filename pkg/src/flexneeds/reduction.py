"""Observability-based network reduction and aggregated-load extraction.

Each measured branch gets an aggregated load at its downstream bus; branches
feeding no aggregated load are pruned, and series chains through unloaded
degree-2 buses are merged with summed impedance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping

import numpy as np

from .measurements import MeasurementError, MeasurementSeries
from .network import Branch, MeasurementLocation, NetworkError, NetworkModel, validate_orientation

log = logging.getLogger(__name__)

REMOVED = "removed"
RatingRule = Literal["max", "min"]


@dataclass(frozen=True, eq=False)
class ReducedNetwork:
    net: NetworkModel
    aggregated_load_buses: tuple[tuple[str, str], ...]
    bus_map: dict[str, str]
    branch_map: dict[str, tuple[str, ...]]
    # measurement id -> id of the nearest upstream measurement (None at top level)
    measurement_parent: dict[str, str | None] = field(default_factory=dict)
    # original bus id -> aggregation bus collecting its load (None if unobserved)
    load_region: dict[str, str | None] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    @property
    def measurement_ids(self) -> list[str]:
        return [m for _, m in self.aggregated_load_buses]

    @property
    def load_bus_ids(self) -> list[str]:
        return [b for b, _ in self.aggregated_load_buses]

    def measurement_children(self) -> dict[str, list[str]]:
        kids: dict[str, list[str]] = {m: [] for m in self.measurement_ids}
        for m, p in self.measurement_parent.items():
            if p is not None:
                kids[p].append(m)
        return kids

    def mapping_dict(self) -> dict:
        return {
            "aggregated_load_buses": [list(x) for x in self.aggregated_load_buses],
            "bus_map": self.bus_map,
            "branch_map": {k: list(v) for k, v in self.branch_map.items()},
            "measurement_parent": self.measurement_parent,
            "notes": list(self.notes),
        }


def reduce_network(net: NetworkModel, rating_rule: RatingRule = "max") -> ReducedNetwork:
    if rating_rule not in ("max", "min"):
        raise ValueError(f"rating_rule must be 'max' or 'min', got {rating_rule!r}")
    net = validate_orientation(net)
    if not net.measurement_locations:
        raise NetworkError("reduction needs at least one measurement location")

    parent: dict[str, str] = {}
    in_branch: dict[str, Branch] = {}
    children: dict[str, list[str]] = {b.id: [] for b in net.buses}
    for br in net.branches:
        parent[br.to_bus] = br.from_bus
        in_branch[br.to_bus] = br
        children[br.from_bus].append(br.to_bus)

    notes: list[str] = []
    agg_of: dict[str, str] = {}  # aggregation bus -> measurement id
    for m in net.measurement_locations:
        if m.branch_id not in net.branch_index:
            raise NetworkError(f"measurement {m.id!r} on nonexistent branch {m.branch_id!r}")
        bus = net.branch(m.branch_id).to_bus
        if bus in agg_of:
            raise NetworkError(f"measurements {agg_of[bus]!r} and {m.id!r} share branch {m.branch_id!r}")
        if not children[bus]:
            notes.append(f"measurement {m.id} is on a leaf-end branch; load placed at {bus}")
        agg_of[bus] = m.id

    # nearest measured ancestor, for both nesting and load regions
    def owner(bus: str) -> str | None:
        while bus != net.root:
            if bus in agg_of:
                return agg_of[bus]
            bus = parent[bus]
        return None

    measurement_parent = {
        m.id: owner(net.branch(m.branch_id).from_bus) for m in net.measurement_locations
    }
    region_owner = {b.id: owner(b.id) for b in net.buses}
    bus_of = {mid: bus for bus, mid in agg_of.items()}
    load_region = {b: (bus_of[m] if m else None) for b, m in region_owner.items()}
    unobserved = [b.id for b in net.buses if (b.has_load or b.has_generation) and region_owner[b.id] is None]
    if unobserved:
        notes.append(f"{len(unobserved)} load/generation bus(es) upstream of every measurement are dropped")

    keep = {net.root}
    for bus in agg_of:
        while bus not in keep:
            keep.add(bus)
            bus = parent[bus]
    kept_children = {b: [c for c in children[b] if c in keep] for b in keep}
    retained = {b for b in keep if b == net.root or b in agg_of or len(kept_children[b]) != 1}

    generation = {b: False for b in agg_of}
    for b in net.buses:
        if b.has_generation and load_region[b.id] is not None:
            generation[load_region[b.id]] = True

    buses = []
    bus_map: dict[str, str] = {}
    for b in net.buses:
        if b.id in retained:
            bus_map[b.id] = b.id
            buses.append(replace(b, has_load=b.id in agg_of, has_generation=generation.get(b.id, False)))
        else:
            bus_map[b.id] = REMOVED

    branches: list[Branch] = []
    branch_map: dict[str, tuple[str, ...]] = {}
    reduced_of: dict[str, str] = {}
    for b in net.buses:
        if b.id not in retained or b.id == net.root:
            continue
        chain = [in_branch[b.id]]
        while chain[-1].from_bus not in retained:
            chain.append(in_branch[chain[-1].from_bus])
        chain.reverse()
        merged = _merge(chain, rating_rule)
        branches.append(merged)
        branch_map[merged.id] = tuple(c.id for c in chain)
        for c in chain:
            reduced_of[c.id] = merged.id

    measurements = tuple(
        MeasurementLocation(m.id, reduced_of[m.branch_id], m.measured_quantities)
        for m in net.measurement_locations
    )
    reduced = NetworkModel(
        buses=tuple(buses),
        branches=tuple(branches),
        transformer=net.transformer,
        measurement_locations=measurements,
        base_power=net.base_power,
        name=f"{net.name} (reduced)" if net.name else "reduced",
    )
    for n in notes:
        log.info(n)
    return ReducedNetwork(
        net=reduced,
        aggregated_load_buses=tuple(
            (net.branch(m.branch_id).to_bus, m.id) for m in net.measurement_locations
        ),
        bus_map=bus_map,
        branch_map=branch_map,
        measurement_parent=measurement_parent,
        load_region=load_region,
        notes=tuple(notes),
    )


def _merge(chain: list[Branch], rule: RatingRule) -> Branch:
    if len(chain) == 1:
        return chain[0]
    pick = (max if rule == "max" else min)(chain, key=lambda br: br.rating)
    return Branch(
        id=f"{chain[0].id}..{chain[-1].id}",
        from_bus=chain[0].from_bus,
        to_bus=chain[-1].to_bus,
        r=math.fsum(br.r for br in chain),
        x=math.fsum(br.x for br in chain),
        rating=pick.rating,
        loading_limit_fraction=pick.loading_limit_fraction,
    )


def size_report(original: NetworkModel, reduced: ReducedNetwork, label: str = "") -> str:
    """Plain-text original/reduced size table."""
    rows = [
        ("Number of branches", len(original.branches), len(reduced.net.branches)),
        ("Number of nodes", len(original.buses), len(reduced.net.buses)),
        ("Number of loads", sum(b.has_load for b in original.buses), len(reduced.aggregated_load_buses)),
    ]
    head = f"{label or original.name or 'network'}"
    lines = [f"{'':<20}{head:^22}", f"{'':<20}{'Original':>11}{'Reduced':>11}"]
    lines += [f"{name:<20}{a:>11}{b:>11}" for name, a, b in rows]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class AggregatedLoads:
    """Aggregated load per (timestep, aggregation bus), positive = consumption."""

    timestamps: np.ndarray
    resolution: int
    bus_ids: tuple[str, ...]
    p_kw: np.ndarray
    q_kvar: np.ndarray | None = None
    approximated: tuple[str, ...] = ()

    def to_bus_arrays(self, net: NetworkModel) -> tuple[np.ndarray, np.ndarray]:
        """Scatter into (T, n_bus) P and Q arrays ordered like ``net.buses``."""
        idx = [net.bus_index[b] for b in self.bus_ids]
        p = np.zeros((len(self.timestamps), len(net.buses)))
        q = np.zeros_like(p)
        p[:, idx] = self.p_kw
        if self.q_kvar is not None:
            q[:, idx] = self.q_kvar
        return p, q


def aggregate_measured_flows(
    measurements: Mapping[str, MeasurementSeries], reduced: ReducedNetwork
) -> AggregatedLoads:
    """Aggregated load at each measurement's bus = its flow minus the flows of
    the measurements nested immediately below it. Line losses between the
    measurement points stay inside the difference."""
    mids = reduced.measurement_ids
    for m in mids:
        if m not in measurements:
            raise MeasurementError(f"no series for measurement location {m!r}")
        if measurements[m].p_kw is None:
            raise MeasurementError(f"{m}: active power missing (current-only series must be approximated first)")
    ref = measurements[mids[0]]
    for m in mids[1:]:
        s = measurements[m]
        if s.resolution != ref.resolution or len(s) != len(ref) or np.any(s.timestamps != ref.timestamps):
            raise MeasurementError(f"timestamp misalignment between {mids[0]!r} and {m!r}")

    kids = reduced.measurement_children()
    p = np.column_stack([measurements[m].p_kw for m in mids]).astype(float)
    have_q = all(measurements[m].q_kvar is not None for m in mids)
    q = np.column_stack([measurements[m].q_kvar for m in mids]).astype(float) if have_q else None
    col = {m: i for i, m in enumerate(mids)}
    p_agg = p.copy()
    q_agg = None if q is None else q.copy()
    for m in mids:
        for c in kids[m]:
            p_agg[:, col[m]] -= p[:, col[c]]
            if q_agg is not None:
                q_agg[:, col[m]] -= q[:, col[c]]
    return AggregatedLoads(
        timestamps=ref.timestamps,
        resolution=ref.resolution,
        bus_ids=tuple(reduced.load_bus_ids),
        p_kw=p_agg,
        q_kvar=q_agg,
        approximated=tuple(m for m in mids if measurements[m].approximated),
    )
