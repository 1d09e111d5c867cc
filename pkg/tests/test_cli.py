import json

import numpy as np
import pytest

from flexneeds.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, main
from flexneeds.fixtures import DEMO_DAY, fixture_paths
from flexneeds.pipeline import ConfigError, RunConfig, load_config, read_flex_csv

NET, MEAS = (str(p) for p in fixture_paths("mlq0094"))
D2 = str(np.datetime64(DEMO_DAY) - np.timedelta64(2, "D"))


def test_subcommand_chain(tmp_path, capsys):
    assert main(["reduce", "--network", NET, "--out-dir", str(tmp_path / "red")]) == EXIT_OK
    reduced = tmp_path / "red" / "reduced_network.json"
    assert reduced.exists() and (tmp_path / "red" / "reduction_map.json").exists()
    assert "Original" in capsys.readouterr().out

    # every later step accepts the reduced file as well as the original
    scen = tmp_path / "scen.csv"
    args = ["scenarios", "--network", str(reduced), "--measurements", MEAS, "--day", D2]
    assert main(args + ["--n-scenarios", "8", "--seed", "3", "--out", str(scen)]) == EXIT_OK
    assert scen.with_suffix(".meta.json").exists()

    fna = tmp_path / "fna"
    assert main(["fna", "--network", NET, "--scenarios", str(scen), "--risk", "0", "--risk", "0.25",
                 "--out-dir", str(fna)]) == EXIT_OK
    assert json.loads((fna / "flex_predicted_eps0.25.json").read_text())["discarded_per_timestep"] == 2

    ev = tmp_path / "ev"
    assert main(["evaluate", "--predicted", str(fna / "flex_predicted_eps0.25.csv"),
                 "--predicted", str(fna / "flex_predicted_eps0.csv"),
                 "--network", NET, "--measurements", MEAS, "--day", DEMO_DAY, "--out-dir", str(ev)]) == EXIT_OK
    kpi = json.loads((ev / "kpi.json").read_text())
    assert [r["risk_level"] for r in kpi] == [0.0, 0.25]
    assert "| Risk level | 0 | 0.25 |" in (ev / "kpi_table.md").read_text()

    # evaluating against the written actual CSV gives the same table
    ev2 = tmp_path / "ev2"
    assert main(["evaluate", "--predicted", str(fna / "flex_predicted_eps0.csv"),
                 "--predicted", str(fna / "flex_predicted_eps0.25.csv"),
                 "--actual", str(ev / "flex_actual.csv"), "--out-dir", str(ev2)]) == EXIT_OK
    assert (ev2 / "kpi_table.md").read_text() == (ev / "kpi_table.md").read_text()


def test_measurements_and_powerflow(tmp_path):
    out = tmp_path / "m"
    assert main(["measurements", "--network", NET, "--measurements", MEAS, "--day", DEMO_DAY,
                 "--out-dir", str(out)]) == EXIT_OK
    assert (out / "aggregated_loads.csv").read_text().startswith("timestamp,bus,p_kw,q_kvar")
    for model in ("linear", "sweep"):
        dest = tmp_path / f"pf_{model}.csv"
        assert main(["powerflow", "--network", NET, "--measurements", MEAS, "--day", DEMO_DAY,
                     "--model", model, "--out", str(dest)]) == EXIT_OK
        assert dest.read_text().splitlines()[0] == "timestep,element,id,v_pu,p_kw,q_kvar,loading_pct"


def test_sweep_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"network": NET, "measurements": MEAS, "n_scenarios": 10,
                               "risk_levels": [0.0, 0.5], "output_dir": str(tmp_path / "cfg_out")}))
    assert main(["sweep", "--config", str(cfg), "--seed", "4"]) == EXIT_OK
    manifest = json.loads((tmp_path / "cfg_out" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 4 and manifest["config"]["n_scenarios"] == 10
    assert "kpi_table.md" in manifest["outputs"]
    assert "| S1 (%) |" in capsys.readouterr().out


def test_demo_small(tmp_path):
    out = tmp_path / "demo"
    assert main(["demo", "--fixture", "mfn4420", "--scenarios", "6", "--risk", "0.5",
                 "--out-dir", str(out)]) == EXIT_OK
    pred = read_flex_csv(out / "flex_predicted_eps0.5.csv")
    assert pred.values.shape[0] == 24
    for name in ("flex_temporal.csv", "flex_locational.csv", "loading_fan.csv", "post_correction.csv"):
        assert (out / name).exists()


@pytest.mark.parametrize(
    "argv, needle",
    [
        (["reduce", "--network", "missing.json", "--out-dir", "x"], "missing.json"),
        (["sweep", "--network", NET, "--measurements", "nope.csv"], "nope.csv"),
        (["demo", "--risk", "1.5"], "risk level"),
        (["demo", "--fixture", "other"], "invalid choice"),
        (["fna", "--network", NET], "required"),
    ],
)
def test_input_errors_exit_1(tmp_path, capsys, argv, needle):
    argv = [a if a != "x" else str(tmp_path / "x") for a in argv]
    assert _exit_code(argv) == EXIT_INPUT
    assert needle in capsys.readouterr().err


def _exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_bad_measurement_names_module(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,location_id,p_kw,q_kvar,i_a\n2023-09-11T00:00:00,NOPE,1,,\n")
    assert main(["measurements", "--network", NET, "--measurements", str(bad), "--out-dir", str(tmp_path)]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert err.startswith("flexneeds: measurement-io:") and "unknown location id 'NOPE'" in err


def test_infeasible_exit_code(tmp_path, capsys):
    # only reactive load on a line whose limit it exceeds cannot be fixed by active power
    net = {
        "name": "tiny",
        "base_power_kva": 100.0,
        "buses": [
            {"id": "r", "nominal_voltage": 230.0, "v_min_pu": 0.95, "v_max_pu": 1.05, "has_load": False, "has_generation": False},
            {"id": "a", "nominal_voltage": 230.0, "v_min_pu": 0.95, "v_max_pu": 1.05, "has_load": True, "has_generation": False},
        ],
        "branches": [{"id": "L1", "from_bus": "r", "to_bus": "a", "r": 0.1, "x": 0.1, "rating": 10.0, "loading_limit_fraction": 1.0}],
        "transformer": {"id": "T", "rating": 100.0, "secondary_bus": "r", "loading_limit_fraction": 1.0},
        "measurements": [{"id": "M", "branch_id": "L1", "measured_quantities": ["P", "Q"]}],
    }
    net_path = tmp_path / "net.json"
    net_path.write_text(json.dumps(net))
    meas = tmp_path / "m.csv"
    stamps = np.datetime64("2023-09-13T00:00") + np.arange(96) * np.timedelta64(15, "m")
    meas.write_text("timestamp,location_id,p_kw,q_kvar,i_a\n" + "".join(f"{t}:00,M,0.5,5,\n" for t in stamps))
    pred = tmp_path / "p.csv"
    pred.write_text("timestep,bus,flex_up_kw,flex_down_kw\n" + "".join(f"{t},{b},0,0\n" for t in range(24) for b in "ra"))
    code = main(["evaluate", "--predicted", str(pred), "--network", str(net_path), "--measurements", str(meas),
                 "--day", "2023-09-13", "--out-dir", str(tmp_path / "o")])
    assert code == EXIT_INFEASIBLE
    assert "flexneeds: fna-opf:" in capsys.readouterr().err


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="missing required"):
        load_config(None, network=NET)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"network": NET, "measurements": MEAS, "bogus": 1}))
    with pytest.raises(ConfigError, match="bogus"):
        load_config(cfg)
    for bad in ({"risk_levels": [0.5, 0.1]}, {"risk_levels": [1.0]}, {"thermal": "circle"}, {"n_scenarios": 0}):
        with pytest.raises(ConfigError):
            RunConfig(NET, MEAS, **bad).validate()
