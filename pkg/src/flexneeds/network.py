"""Radial single-phase-equivalent LV network model.

The network is read from a JSON document (see ``data/network.schema.json``),
validated structurally and returned as an immutable :class:`NetworkModel`
whose branches are oriented away from the transformer secondary bus.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import jsonschema
import numpy as np

MEASURABLE = frozenset({"P", "Q", "I_abs"})

_THREE_PHASE_KEY = re.compile(r"(phase|_abc$|_[abc]$|^[pqiv]_?[abc]$)", re.IGNORECASE)


class NetworkError(ValueError):
    """Invalid network data (schema, topology or dangling reference)."""


@dataclass(frozen=True)
class Bus:
    id: str
    nominal_voltage: float
    v_min_pu: float = 0.95
    v_max_pu: float = 1.05
    has_load: bool = False
    has_generation: bool = False

    def __post_init__(self) -> None:
        if not self.nominal_voltage > 0:
            raise NetworkError(f"bus {self.id!r}: nominal_voltage must be > 0")
        if not 0 < self.v_min_pu < self.v_max_pu:
            raise NetworkError(f"bus {self.id!r}: need 0 < v_min_pu < v_max_pu")

    @property
    def is_flexible(self) -> bool:
        """Flexibility is assumed available wherever load or generation is connected."""
        return self.has_load or self.has_generation


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    rating: float
    loading_limit_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.r < 0 or self.x < 0 or (self.r == 0 and self.x == 0):
            raise NetworkError(f"branch {self.id!r}: need r >= 0, x >= 0, not both zero")
        if not self.rating > 0:
            raise NetworkError(f"branch {self.id!r}: rating must be > 0")
        if not 0 < self.loading_limit_fraction <= 1:
            raise NetworkError(f"branch {self.id!r}: loading_limit_fraction must be in (0, 1]")

    @property
    def current_limit(self) -> float:
        """Effective ampacity in A."""
        return self.rating * self.loading_limit_fraction

    def flipped(self) -> Branch:
        return replace(self, from_bus=self.to_bus, to_bus=self.from_bus)


@dataclass(frozen=True)
class Transformer:
    id: str
    rating: float
    secondary_bus: str
    loading_limit_fraction: float = 1.0

    def __post_init__(self) -> None:
        if not self.rating > 0:
            raise NetworkError(f"transformer {self.id!r}: rating must be > 0")
        if not 0 < self.loading_limit_fraction <= 1:
            raise NetworkError(f"transformer {self.id!r}: loading_limit_fraction must be in (0, 1]")

    @property
    def s_limit_kva(self) -> float:
        return self.rating * self.loading_limit_fraction


@dataclass(frozen=True)
class MeasurementLocation:
    id: str
    branch_id: str
    measured_quantities: frozenset[str]

    def __post_init__(self) -> None:
        if not self.measured_quantities:
            raise NetworkError(f"measurement {self.id!r}: measured_quantities is empty")
        unknown = set(self.measured_quantities) - MEASURABLE
        if unknown:
            raise NetworkError(f"measurement {self.id!r}: unknown quantities {sorted(unknown)}")


@dataclass(frozen=True)
class NetworkModel:
    """Immutable radial network.

    Construction validates references and radiality but keeps the branch
    orientation as given; :func:`validate_orientation` (called by
    :func:`load_network`) returns the copy oriented away from the root.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    transformer: Transformer
    measurement_locations: tuple[MeasurementLocation, ...] = ()
    base_power: float = 100.0
    name: str = ""

    def __post_init__(self) -> None:
        _check_unique("bus", [b.id for b in self.buses])
        _check_unique("branch", [b.id for b in self.branches])
        _check_unique("measurement", [m.id for m in self.measurement_locations])
        if not self.base_power > 0:
            raise NetworkError("base_power must be > 0")
        ids = {b.id for b in self.buses}
        if self.transformer.secondary_bus not in ids:
            raise NetworkError(
                f"transformer secondary_bus references missing bus {self.transformer.secondary_bus!r}"
            )
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in ids:
                    raise NetworkError(f"branch {br.id!r} references missing bus {end!r}")
            if br.from_bus == br.to_bus:
                raise NetworkError(f"branch {br.id!r} is a self-loop on {br.from_bus!r}")
        branch_ids = {b.id for b in self.branches}
        for m in self.measurement_locations:
            if m.branch_id not in branch_ids:
                raise NetworkError(f"measurement {m.id!r} references missing branch {m.branch_id!r}")
        _check_radial(self)

    # -- lookups -----------------------------------------------------------

    @property
    def root(self) -> str:
        return self.transformer.secondary_bus

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.branches)}

    def bus(self, bus_id: str) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    def branch(self, branch_id: str) -> Branch:
        return self.branches[self.branch_index[branch_id]]

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    @property
    def branch_ids(self) -> list[str]:
        return [b.id for b in self.branches]

    @cached_property
    def topology(self) -> RadialTopology:
        """Index arrays for the oriented tree (requires oriented branches)."""
        return RadialTopology.build(self)

    def is_oriented(self) -> bool:
        parent = _bfs_parents(self)
        return all(parent.get(br.to_bus) == (br.from_bus, br.id) for br in self.branches)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.name:
            out["name"] = self.name
        out["base_power_kva"] = self.base_power
        out["buses"] = [asdict(b) for b in self.buses]
        out["branches"] = [asdict(b) for b in self.branches]
        out["transformer"] = asdict(self.transformer)
        out["measurements"] = [
            {"id": m.id, "branch_id": m.branch_id, "measured_quantities": sorted(m.measured_quantities)}
            for m in self.measurement_locations
        ]
        return out

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> NetworkModel:
        _reject_three_phase(doc)
        try:
            jsonschema.validate(doc, network_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise NetworkError(f"schema violation at {where}: {exc.message}") from None
        return cls(
            buses=tuple(Bus(**b) for b in doc["buses"]),
            branches=tuple(Branch(**b) for b in doc["branches"]),
            transformer=Transformer(**doc["transformer"]),
            measurement_locations=tuple(
                MeasurementLocation(m["id"], m["branch_id"], frozenset(m["measured_quantities"]))
                for m in doc["measurements"]
            ),
            base_power=float(doc["base_power_kva"]),
            name=doc.get("name", ""),
        )


@dataclass(frozen=True)
class RadialTopology:
    """Array view of an oriented radial network.

    ``order`` lists bus indices in BFS order from the root. Every non-root bus
    ``j`` is fed by exactly one branch, ``in_branch[j]``, from ``parent[j]``.
    ``down[e, j]`` is 1 when bus ``j`` lies in the subtree fed by branch ``e``
    (so branch flows are ``loads @ down.T``); ``path[j, e]`` is its transpose,
    i.e. branch ``e`` lies on the root-to-``j`` path.
    """

    root: int
    order: np.ndarray
    parent: np.ndarray
    in_branch: np.ndarray
    branch_to: np.ndarray
    branch_from: np.ndarray
    down: np.ndarray = field(repr=False)

    @property
    def path(self) -> np.ndarray:
        return self.down.T

    @classmethod
    def build(cls, net: NetworkModel) -> RadialTopology:
        if not net.is_oriented():
            raise NetworkError("topology requires branches oriented away from the root")
        n, m = len(net.buses), len(net.branches)
        idx = net.bus_index
        parent = np.full(n, -1, dtype=int)
        in_branch = np.full(n, -1, dtype=int)
        branch_to = np.empty(m, dtype=int)
        branch_from = np.empty(m, dtype=int)
        children: list[list[int]] = [[] for _ in range(n)]
        for e, br in enumerate(net.branches):
            i, j = idx[br.from_bus], idx[br.to_bus]
            parent[j], in_branch[j] = i, e
            branch_from[e], branch_to[e] = i, j
            children[i].append(j)
        root = idx[net.root]
        order = [root]
        for i in order:
            order.extend(children[i])
        down = np.zeros((m, n))
        for j in reversed(order):
            e = in_branch[j]
            if e < 0:
                continue
            down[e, j] = 1.0
            for c in children[j]:
                down[e] += down[in_branch[c]]
        return cls(root, np.asarray(order), parent, in_branch, branch_to, branch_from, down)


def network_schema() -> dict[str, Any]:
    text = resources.files("flexneeds").joinpath("data/network.schema.json").read_text()
    return json.loads(text)


def load_network(path: str | Path) -> NetworkModel:
    """Read, validate and orient a network JSON file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"network file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: invalid JSON ({exc})") from None
    return validate_orientation(NetworkModel.from_dict(doc))


def save_network(net: NetworkModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=1) + "\n")


def validate_orientation(net: NetworkModel) -> NetworkModel:
    """Return a copy with every branch pointing away from the transformer secondary.

    Branch order is preserved, so an already oriented network comes back equal.
    """
    if not net.root:
        raise NetworkError("no root bus defined")
    parent = _bfs_parents(net)
    branches = []
    for br in net.branches:
        if parent.get(br.to_bus) == (br.from_bus, br.id):
            branches.append(br)
        else:
            branches.append(br.flipped())
    if all(a is b for a, b in zip(branches, net.branches)):
        return net
    return replace(net, branches=tuple(branches))


def _bfs_parents(net: NetworkModel) -> dict[str, tuple[str, str]]:
    adj = _adjacency(net.branches)
    parent: dict[str, tuple[str, str]] = {}
    seen = {net.root}
    queue = deque([net.root])
    while queue:
        u = queue.popleft()
        for v, bid in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                parent[v] = (u, bid)
                queue.append(v)
    return parent


def _adjacency(branches: Iterable[Branch]) -> dict[str, list[tuple[str, str]]]:
    adj: dict[str, list[tuple[str, str]]] = {}
    for br in branches:
        adj.setdefault(br.from_bus, []).append((br.to_bus, br.id))
        adj.setdefault(br.to_bus, []).append((br.from_bus, br.id))
    return adj


def _check_radial(net: NetworkModel) -> None:
    # union-find catches the first cycle; BFS reports unreachable buses
    leader = {b.id: b.id for b in net.buses}

    def find(a: str) -> str:
        while leader[a] != a:
            leader[a] = leader[leader[a]]
            a = leader[a]
        return a

    for br in net.branches:
        ra, rb = find(br.from_bus), find(br.to_bus)
        if ra == rb:
            cycle = _cycle_through(net.branches, br)
            raise NetworkError(f"non-radial topology: cycle {' - '.join(cycle)}")
        leader[ra] = rb
    reached = set(_bfs_parents(net)) | {net.root}
    missing = [b.id for b in net.buses if b.id not in reached]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise NetworkError(f"non-radial topology: disconnected bus(es) {shown}")


def _cycle_through(branches: tuple[Branch, ...], closing: Branch) -> list[str]:
    """Bus sequence of the cycle closed by ``closing`` (branches before it form a forest)."""
    earlier = branches[: branches.index(closing)]
    adj = _adjacency(earlier)
    prev: dict[str, str | None] = {closing.from_bus: None}
    queue = deque([closing.from_bus])
    while queue:
        u = queue.popleft()
        for v, _ in adj.get(u, ()):
            if v not in prev:
                prev[v] = u
                queue.append(v)
    path = [closing.to_bus]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])  # type: ignore[arg-type]
    return path + [closing.to_bus]


def _check_unique(kind: str, ids: list[str]) -> None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise NetworkError(f"duplicate {kind} id {i!r}")
        seen.add(i)


def _reject_three_phase(doc: Any) -> None:
    for key in ("buses", "branches", "measurements"):
        for item in doc.get(key, []) if isinstance(doc, dict) else []:
            if not isinstance(item, dict):
                continue
            bad = [k for k in item if _THREE_PHASE_KEY.search(k)]
            if bad:
                raise NetworkError(
                    f"three-phase field(s) {bad} in {key} entry {item.get('id')!r}: "
                    "only single-phase-equivalent data is supported"
                )
