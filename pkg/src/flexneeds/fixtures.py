"""Synthetic demo fixtures shaped like the two German LV demo networks.

The networks are random radial feeders built so that the observability
reduction lands on prescribed sizes, and the measurement files come from
simulating three days (D-2, D-1, demo day D) of household load and rooftop PV
on the *full* network with the exact sweep, so measured flows include losses.

Everything here is synthetic; topology, cable data, nominal voltage (230 V
single-phase equivalent) and profiles are invented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .measurements import MeasurementSeries, write_measurements
from .network import Branch, Bus, MeasurementLocation, NetworkModel, Transformer, save_network
from .powerflow import sweep_flow

V_NOM = 230.0
START = np.datetime64("2023-09-11T00:00", "m")
DEMO_DAY = "2023-09-13"
RESOLUTION = 15
DAYS = 3

# single-phase equivalents of three-phase LV cables: r/3, x/3, 3 x ampacity
MAIN_CABLE = (0.206 / 3, 0.080 / 3, 3 * 275.0)  # ohm/km, ohm/km, A
SERVICE_CABLE = (0.641 / 3, 0.083 / 3, 3 * 144.0)


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    n_buses: int
    n_loads: int
    n_measurements: int
    n_junctions: int
    line_fraction: float
    transformer_kva: float
    transformer_fraction: float
    n_feeders: int
    tie_line: bool
    pv_share: float
    pv_kwp: float
    household_kw: float
    # demo-day multipliers relative to D-2
    demo_load_factor: float
    demo_pv_factor: float
    # thermal calibration of the congested element, as limit / D-2 peak flow
    congestion_margin: float
    seed: int


MFN4420 = FixtureSpec(
    name="MFn4420",
    n_buses=561,
    n_loads=222,
    n_measurements=25,
    n_junctions=12,
    line_fraction=0.5,
    transformer_kva=800.0,
    transformer_fraction=0.5,
    n_feeders=6,
    tie_line=False,
    pv_share=0.35,
    pv_kwp=7.0,
    household_kw=0.9,
    demo_load_factor=1.0,
    demo_pv_factor=0.93,
    congestion_margin=1.1,
    seed=4420,
)

MLQ0094 = FixtureSpec(
    name="MLq0094",
    n_buses=603,
    n_loads=331,
    n_measurements=30,
    n_junctions=9,
    line_fraction=0.4,
    transformer_kva=1000.0,
    transformer_fraction=0.5,
    n_feeders=5,
    tie_line=True,
    pv_share=0.08,
    pv_kwp=5.0,
    household_kw=0.5,
    demo_load_factor=1.0,
    demo_pv_factor=1.0,
    congestion_margin=0.8,
    seed=94,
)

SPECS = {"mfn4420": MFN4420, "mlq0094": MLQ0094}


def _skeleton(spec: FixtureSpec, rng: np.random.Generator) -> tuple[list[tuple[str, str, str]], list[str]]:
    """Edges (parent, child, kind) among retained buses; kind is 'agg' or 'junction'.

    Junctions never hang off the root, so every load ends up below a measurement.
    """
    for _ in range(1000):
        edges: list[tuple[str, str, str]] = []
        placed: list[str] = []
        n_agg = 0

        def new_agg(parent: str) -> str:
            nonlocal n_agg
            n_agg += 1
            name = f"A{n_agg:02d}"
            edges.append((parent, name, "agg"))
            placed.append(name)
            return name

        heads = 1 if spec.tie_line else spec.n_feeders
        for _ in range(heads):
            new_agg("root")
        if spec.tie_line:
            for _ in range(spec.n_feeders):
                new_agg("A01")
        junctions = []
        for j in range(spec.n_junctions):
            parent = placed[int(rng.integers(1 if spec.tie_line else 0, len(placed)))]
            name = f"J{j + 1:02d}"
            edges.append((parent, name, "junction"))
            placed.append(name)
            junctions.append(name)
        for jn in junctions:
            have = sum(1 for p, _, _ in edges if p == jn)
            for _ in range(max(0, 2 - have)):
                new_agg(jn)
        if n_agg > spec.n_measurements:
            continue
        while n_agg < spec.n_measurements:
            start = 1 if spec.tie_line else 0
            new_agg(placed[int(rng.integers(start, len(placed)))])
        return edges, junctions
    raise RuntimeError("could not build skeleton")


def build_network(spec: FixtureSpec) -> NetworkModel:
    rng = np.random.default_rng(spec.seed)
    edges, _ = _skeleton(spec, rng)

    counter = iter(range(1, 10**6))
    ids: dict[str, str] = {"root": "N0000"}

    def bid() -> str:
        return f"N{next(counter):04d}"

    branches: list[tuple[str, str, float, tuple[float, float, float]]] = []
    skeleton_bus: list[str] = []
    measured: list[tuple[str, str]] = []  # (branch id placeholder index, agg name)
    for parent, child, kind in edges:
        ids[child] = bid()
        from_bus = ids[parent]
        if parent == "root" or (spec.tie_line and parent == "A01"):
            n_seg = 1
        else:
            n_seg = int(rng.integers(1, 7))
        prev = from_bus
        for s in range(n_seg):
            to_bus = ids[child] if s == n_seg - 1 else bid()
            length = float(rng.uniform(0.015, 0.05))
            branches.append((prev, to_bus, length, MAIN_CABLE))
            if to_bus != ids[child]:
                skeleton_bus.append(to_bus)
            prev = to_bus
        skeleton_bus.append(ids[child])
        if kind == "agg":
            measured.append((str(len(branches) - 1), child))
    n_have = 1 + len(skeleton_bus)
    side_buses: list[str] = []
    parents_used = {u for u, _, _, _ in branches}
    for _, agg in measured:
        if ids[agg] not in parents_used:
            child = bid()
            branches.append((ids[agg], child, float(rng.uniform(0.01, 0.035)), SERVICE_CABLE))
            side_buses.append(child)
            n_have += 1
    while n_have < spec.n_buses:
        pool = side_buses if side_buses and rng.random() < 0.6 else skeleton_bus
        parent = pool[int(rng.integers(0, len(pool)))]
        child = bid()
        branches.append((parent, child, float(rng.uniform(0.01, 0.035)), SERVICE_CABLE))
        side_buses.append(child)
        n_have += 1

    all_buses = ["N0000"] + skeleton_bus + side_buses
    agg_buses = {ids[a] for _, a in measured}
    non_root = all_buses[1:]
    loads = set(agg_buses)
    rest = [b for b in non_root if b not in loads]
    rng.shuffle(rest)
    loads.update(rest[: spec.n_loads - len(loads)])
    load_list = sorted(loads)
    n_pv = int(round(spec.pv_share * len(load_list)))
    pv = set(rng.choice(load_list, size=n_pv, replace=False).tolist()) if n_pv else set()

    buses = tuple(
        Bus(b, V_NOM, 0.95, 1.05, has_load=b in loads, has_generation=b in pv) for b in sorted(all_buses)
    )
    br_objs = []
    for k, (u, v, length, (r, x, amp)) in enumerate(branches):
        br_objs.append(
            Branch(f"L{k + 1:04d}", u, v, round(r * length, 6), round(x * length, 6), amp, spec.line_fraction)
        )
    meas = []
    for idx, agg in measured:
        br = br_objs[int(idx)]
        quantities = frozenset({"I_abs"}) if (spec.tie_line and agg == "A01") else frozenset({"P", "Q", "I_abs"})
        meas.append(MeasurementLocation(f"M{agg[1:]}", br.id, quantities))
    net = NetworkModel(
        buses=buses,
        branches=tuple(br_objs),
        transformer=Transformer("TR1", spec.transformer_kva, "N0000", spec.transformer_fraction),
        measurement_locations=tuple(meas),
        base_power=100.0,
        name=spec.name,
    )
    return net


def _profiles(spec: FixtureSpec, net: NetworkModel, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(T, n_bus) P and Q over three days at 15-minute resolution."""
    steps_per_day = 24 * 60 // RESOLUTION
    T = DAYS * steps_per_day
    hours = (np.arange(T) % steps_per_day) * RESOLUTION / 60.0
    day = np.arange(T) // steps_per_day

    shape = (
        0.35
        + 0.45 * np.exp(-0.5 * ((hours - 7.5) / 1.2) ** 2)
        + 0.25 * np.exp(-0.5 * ((hours - 12.5) / 1.5) ** 2)
        + 1.0 * np.exp(-0.5 * ((hours - 19.5) / 1.8) ** 2)
    )
    sun = np.clip(np.cos((hours - 13.0) / 6.5 * math.pi / 2), 0, None) ** 1.5
    clear = np.array([1.0, 0.8, spec.demo_pv_factor])[day]
    level = np.array([1.0, 0.97, spec.demo_load_factor])[day]

    n = len(net.buses)
    p = np.zeros((T, n))
    q = np.zeros((T, n))
    tan_phi = math.tan(math.acos(0.95))
    for i, b in enumerate(net.buses):
        if b.has_load:
            scale = spec.household_kw * rng.lognormal(0.0, 0.35)
            noise = 1.0 + 0.12 * rng.standard_normal(T)
            load = np.clip(scale * shape * level * noise, 0.05, None)
            p[:, i] += load
            q[:, i] += load * tan_phi
        if b.has_generation:
            kwp = spec.pv_kwp * rng.uniform(0.7, 1.3)
            cloud = np.clip(1.0 - 0.06 * np.abs(rng.standard_normal(T)), 0, 1)
            p[:, i] -= 0.8 * kwp * sun * clear * cloud
    return p, q


def _measure(net: NetworkModel, p: np.ndarray, q: np.ndarray) -> dict[str, dict[str, np.ndarray]]:
    op = sweep_flow(net, p, q, tol=1e-10)
    if not op.converged:
        raise RuntimeError("fixture power flow did not converge")
    out = {}
    for m in net.measurement_locations:
        e = net.branch_index[m.branch_id]
        src = net.bus_index[net.branch(m.branch_id).from_bus]
        s = op.s_kva[:, e]
        out[m.id] = {
            "p_kw": op.p_kw[:, e],
            "q_kvar": op.q_kvar[:, e],
            "i_a": s * 1000.0 / (op.v_pu[:, src] * V_NOM),
        }
    return out


def _calibrate(spec: FixtureSpec, net: NetworkModel, meas: dict[str, dict[str, np.ndarray]]) -> NetworkModel:
    """Set the congested element's rating relative to the D-2 flow it carries."""
    steps = 24 * 60 // RESOLUTION
    d2 = slice(0, steps)
    if spec.tie_line:
        m = net.measurement_locations[0]
        peak = float(np.max(np.hypot(meas[m.id]["p_kw"][d2], meas[m.id]["q_kvar"][d2])))
        target = m.branch_id
    else:
        # feeder head with the deepest midday reverse flow
        heads = [m for m in net.measurement_locations if net.branch(m.branch_id).from_bus == net.root]
        m = min(heads, key=lambda h: float(np.min(meas[h.id]["p_kw"][d2])))
        peak = float(np.max(np.hypot(meas[m.id]["p_kw"][d2], meas[m.id]["q_kvar"][d2])))
        target = m.branch_id
    amps = round(spec.congestion_margin * peak * 1000.0 / (V_NOM * spec.line_fraction), 3)
    # the trunk behind the calibrated element is never weaker than the element itself
    topo = net.topology
    below = topo.down[net.branch_index[target]] > 0
    trunk = {
        b.id
        for e, b in enumerate(net.branches)
        if below[topo.branch_to[e]] and b.rating == MAIN_CABLE[2] and b.rating < amps
    }
    branches = tuple(
        Branch(b.id, b.from_bus, b.to_bus, b.r, b.x, amps, b.loading_limit_fraction)
        if b.id == target or b.id in trunk
        else b
        for b in net.branches
    )
    return NetworkModel(
        net.buses, branches, net.transformer, net.measurement_locations, net.base_power, net.name
    )


def build_fixture(spec: FixtureSpec) -> tuple[NetworkModel, list[MeasurementSeries]]:
    net = build_network(spec)
    rng = np.random.default_rng(spec.seed + 1)
    p, q = _profiles(spec, net, rng)
    meas = _measure(net, p, q)
    net = _calibrate(spec, net, meas)
    stamps = START + np.arange(p.shape[0]) * RESOLUTION
    series = []
    for m in net.measurement_locations:
        d = meas[m.id]
        series.append(
            MeasurementSeries(
                m.id,
                RESOLUTION,
                stamps,
                p_kw=np.round(d["p_kw"], 4) if "P" in m.measured_quantities else None,
                q_kvar=np.round(d["q_kvar"], 4) if "Q" in m.measured_quantities else None,
                i_a=np.round(d["i_a"], 3),
            )
        )
    return net, series


def write_fixture(spec: FixtureSpec, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    net, series = build_fixture(spec)
    net_path = directory / f"{spec.name.lower()}_network.json"
    meas_path = directory / f"{spec.name.lower()}_measurements.csv"
    save_network(net, net_path)
    write_measurements(series, meas_path)
    return net_path, meas_path


def fixture_paths(name: str) -> tuple[Path, Path]:
    """Paths of a shipped fixture, e.g. ``fixture_paths("mfn4420")``."""
    base = resources.files("flexneeds").joinpath("data")
    key = name.lower()
    return Path(str(base / f"{key}_network.json")), Path(str(base / f"{key}_measurements.csv"))


if __name__ == "__main__":
    out = Path(__file__).parent / "data"
    for spec in SPECS.values():
        print(*write_fixture(spec, out))
