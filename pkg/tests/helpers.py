"""Small network builders shared by the tests."""

from __future__ import annotations

import numpy as np

from flexneeds.network import Branch, Bus, MeasurementLocation, NetworkModel, Transformer

V = 230.0


def bus(i: str, load: bool = False, gen: bool = False, vmin: float = 0.95, vmax: float = 1.05) -> Bus:
    return Bus(i, V, vmin, vmax, has_load=load, has_generation=gen)


def two_bus(limit_kva: float = 4.0, r: float = 0.1, x: float = 0.1, tr_kva: float = 1000.0) -> NetworkModel:
    """root -- leaf; branch ampacity chosen so the apparent-power limit is ``limit_kva``."""
    return NetworkModel(
        buses=(bus("root"), bus("leaf", load=True, vmin=0.5, vmax=1.5)),
        branches=(Branch("L1", "root", "leaf", r, x, limit_kva * 1000.0 / V, 1.0),),
        transformer=Transformer("TR", tr_kva, "root", 1.0),
    )


def chain(n: int, r: float = 0.01, x: float = 0.005, rating: float = 400.0, loads: set[int] | None = None) -> NetworkModel:
    """Buses B0 (root) .. B{n-1} in series; ``loads`` lists bus numbers with load."""
    loads = set(range(1, n)) if loads is None else loads
    buses = tuple(bus(f"B{i}", load=i in loads) for i in range(n))
    branches = tuple(Branch(f"L{i}", f"B{i - 1}", f"B{i}", r, x, rating) for i in range(1, n))
    return NetworkModel(buses, branches, Transformer("TR", 400.0, "B0"))


def random_radial(
    rng: np.random.Generator,
    n: int,
    rating: float = 275.0,
    fraction: float = 1.0,
    flexible: set[int] | None = None,
    gen: set[int] | None = None,
    tr_kva: float = 1000.0,
) -> NetworkModel:
    """Random tree over buses N0..N{n-1} with cable-like impedances; every
    non-root bus is flexible unless ``flexible`` says otherwise."""
    buses = []
    for i in range(n):
        flex = i > 0 if flexible is None else i in flexible
        buses.append(bus(f"N{i}", load=flex, gen=gen is not None and i in gen))
    branches = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        length = float(rng.uniform(0.01, 0.08))
        branches.append(Branch(f"E{i}", f"N{parent}", f"N{i}", 0.206 * length, 0.08 * length, rating, fraction))
    return NetworkModel(tuple(buses), tuple(branches), Transformer("TR", tr_kva, "N0", 1.0))


def fig4_network() -> NetworkModel:
    """Feeder with two measurements in series (P1 near the root, P2 further
    down), loads between and beyond them, and an unloaded side branch.

        R -a- A -b- B -c- C -d- D -e- E
                    |           |
                    f           g
                    F           G
    P1 on branch a, P2 on branch d.
    """
    buses = (
        bus("R"),
        bus("A", load=True),
        bus("B"),
        bus("C", load=True),
        bus("D", load=True),
        bus("E", load=True),
        bus("F", load=True),
        bus("G"),
    )
    br = [
        Branch("a", "R", "A", 0.01, 0.004, 300.0),
        Branch("b", "A", "B", 0.02, 0.008, 250.0),
        Branch("c", "B", "C", 0.03, 0.012, 200.0),
        Branch("d", "C", "D", 0.04, 0.016, 150.0),
        Branch("e", "D", "E", 0.05, 0.020, 150.0),
        Branch("f", "B", "F", 0.06, 0.024, 100.0),
        Branch("g", "D", "G", 0.07, 0.028, 100.0),
    ]
    meas = (
        MeasurementLocation("P1", "a", frozenset({"P", "Q"})),
        MeasurementLocation("P2", "d", frozenset({"P", "Q"})),
    )
    return NetworkModel(buses, tuple(br), Transformer("TR", 250.0, "R", 0.5), meas)
