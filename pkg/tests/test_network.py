import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexneeds.fixtures import fixture_paths
from flexneeds.network import (
    Branch,
    Bus,
    MeasurementLocation,
    NetworkError,
    NetworkModel,
    Transformer,
    load_network,
    save_network,
    validate_orientation,
)
from helpers import bus, chain, random_radial


def _doc(branches, buses=("root", "A", "B")):
    return {
        "base_power_kva": 100.0,
        "buses": [{"id": b, "nominal_voltage": 230.0} for b in buses],
        "branches": [
            {"id": f"L{i}", "from_bus": u, "to_bus": v, "r": 0.1, "x": 0.05, "rating": 100.0}
            for i, (u, v) in enumerate(branches)
        ],
        "transformer": {"id": "TR", "rating": 250.0, "secondary_bus": "root"},
        "measurements": [],
    }


def _write(tmp_path, doc):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(doc))
    return path


def test_three_bus_chain_loads(tmp_path):
    net = load_network(_write(tmp_path, _doc([("root", "A"), ("A", "B")])))
    assert len(net.buses) == 3 and len(net.branches) == 2
    assert net.root == "root"
    assert net.is_oriented()


def test_loop_is_rejected(tmp_path):
    doc = _doc([("root", "A"), ("A", "B"), ("B", "root")])
    with pytest.raises(NetworkError, match="non-radial topology"):
        load_network(_write(tmp_path, doc))


def test_disconnected_bus_is_named(tmp_path):
    doc = _doc([("root", "A")], buses=("root", "A", "lonely"))
    with pytest.raises(NetworkError, match="disconnected.*lonely"):
        load_network(_write(tmp_path, doc))


def test_dangling_reference_names_missing_id(tmp_path):
    doc = _doc([("root", "A"), ("A", "ghost")])
    with pytest.raises(NetworkError, match="ghost"):
        load_network(_write(tmp_path, doc))


def test_schema_violation_names_field(tmp_path):
    doc = _doc([("root", "A"), ("A", "B")])
    doc["branches"][1]["r"] = "small"
    with pytest.raises(NetworkError, match="branches/1/r"):
        load_network(_write(tmp_path, doc))


def test_three_phase_fields_rejected(tmp_path):
    doc = _doc([("root", "A"), ("A", "B")])
    doc["branches"][0]["r_phase_a"] = 0.1
    with pytest.raises(NetworkError, match="three-phase"):
        load_network(_write(tmp_path, doc))


def test_missing_file():
    with pytest.raises(FileNotFoundError, match="nowhere.json"):
        load_network("nowhere.json")


def test_measurement_on_missing_branch():
    with pytest.raises(NetworkError, match="missing branch 'L9'"):
        NetworkModel(
            (bus("r"), bus("a")),
            (Branch("L1", "r", "a", 0.1, 0.1, 100.0),),
            Transformer("TR", 100.0, "r"),
            (MeasurementLocation("M", "L9", frozenset({"P"})),),
        )


@pytest.mark.parametrize(
    "make",
    [
        lambda: Bus("b", 0.0),
        lambda: Bus("b", 230.0, 1.05, 0.95),
        lambda: Branch("l", "a", "b", 0.0, 0.0, 10.0),
        lambda: Branch("l", "a", "b", -0.1, 0.1, 10.0),
        lambda: Branch("l", "a", "b", 0.1, 0.1, 0.0),
        lambda: Branch("l", "a", "b", 0.1, 0.1, 10.0, 1.2),
        lambda: Transformer("t", 100.0, "r", 0.0),
        lambda: MeasurementLocation("m", "l", frozenset()),
        lambda: MeasurementLocation("m", "l", frozenset({"V"})),
    ],
)
def test_element_invariants(make):
    with pytest.raises(NetworkError):
        make()


def test_effective_limits():
    br = Branch("l", "a", "b", 0.1, 0.1, 200.0, 0.4)
    assert br.current_limit == pytest.approx(80.0)
    assert Transformer("t", 400.0, "r", 0.5).s_limit_kva == 200.0


def test_orientation_flip():
    net = NetworkModel(
        (bus("root"), bus("A")), (Branch("L", "A", "root", 0.1, 0.1, 10.0),), Transformer("T", 1.0, "root")
    )
    assert not net.is_oriented()
    fixed = validate_orientation(net)
    assert (fixed.branches[0].from_bus, fixed.branches[0].to_bus) == ("root", "A")


def test_orientation_idempotent_on_oriented_tree():
    net = chain(5)
    assert validate_orientation(net) is net


def test_star_orientation():
    leaves = [f"S{i}" for i in range(4)]
    net = NetworkModel(
        (bus("c"),) + tuple(bus(s) for s in leaves),
        tuple(Branch(f"L{i}", s, "c", 0.1, 0.1, 10.0) for i, s in enumerate(leaves)),
        Transformer("T", 1.0, "c"),
    )
    fixed = validate_orientation(net)
    assert all(b.from_bus == "c" for b in fixed.branches)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 10_000), flips=st.lists(st.booleans(), min_size=30, max_size=30))
def test_orientation_properties(n, seed, flips):
    net = random_radial(np.random.default_rng(seed), n)
    scrambled = NetworkModel(
        net.buses,
        tuple(b.flipped() if f else b for b, f in zip(net.branches, flips)),
        net.transformer,
    )
    once = validate_orientation(scrambled)
    assert once.is_oriented()
    assert validate_orientation(once) == once
    assert len(once.branches) == len(once.buses) - 1
    topo = once.topology
    assert sorted(topo.order.tolist()) == list(range(n))


def test_round_trip(tmp_path):
    src, _ = fixture_paths("mfn4420")
    net = load_network(src)
    out = tmp_path / "copy.json"
    save_network(net, out)
    assert load_network(out) == net


def test_fixture_original_sizes():
    net = load_network(fixture_paths("mfn4420")[0])
    assert (len(net.buses), len(net.branches), sum(b.has_load for b in net.buses)) == (561, 560, 222)
    net = load_network(fixture_paths("mlq0094")[0])
    assert (len(net.buses), len(net.branches), sum(b.has_load for b in net.buses)) == (603, 602, 331)


def test_topology_down_matrix():
    net = chain(4)
    down = net.topology.down
    # branch into B1 carries B1..B3, branch into B3 only B3
    assert down.tolist() == [[0, 1, 1, 1], [0, 0, 1, 1], [0, 0, 0, 1]]
