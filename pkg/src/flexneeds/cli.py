"""Command-line entry point.

Exit codes: 0 ok, 1 input error, 2 infeasibility, 3 internal error.
Every subcommand that takes a network accepts either the original or an
already reduced network file; reduction is idempotent.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .fixtures import SPECS, fixture_paths
from .kpi import DEFAULT_TOL_KW, TABLE_RISK_LEVELS, kpi_report, kpi_table_csv, kpi_table_markdown
from .measurements import DEFAULT_POWER_FACTOR, MeasurementError, load_measurements, write_measurements
from .network import NetworkError, load_network
from .opf import InfeasibleError, SolverError, aggregate_chance_constrained, compute_actual_flex, scenario_bus_loads, solve_scenarios
from .pipeline import (
    ConfigError,
    RunConfig,
    day_window,
    load_config,
    prepare_measurements,
    read_flex_csv,
    run_pipeline,
    with_overrides,
    write_flex_csv,
    write_reduction,
    write_run_meta,
)
from .powerflow import linearized_flow, loading_percent, sweep_flow
from .reduction import aggregate_measured_flows, reduce_network
from .scenarios import generate_scenarios, read_scenarios, write_scenarios

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3

# exception type -> module named in the error message
_MODULES = (
    (NetworkError, "network-model"),
    (MeasurementError, "measurement-io"),
    (ConfigError, "config"),
    (InfeasibleError, "fna-opf"),
    (SolverError, "fna-opf"),
)

log = logging.getLogger("flexneeds")


def _risk(text: str) -> float:
    value = float(text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError(f"risk level must be in [0, 1), got {text}")
    return value


def _add_network(p: argparse.ArgumentParser) -> None:
    p.add_argument("--network", required=True, help="network JSON (original or reduced)")
    p.add_argument("--rating-rule", choices=("max", "min"), default="max", help="merged-branch rating rule")


def _add_measurement_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--measurements", required=True, help="measurement CSV")
    p.add_argument("--pf", type=float, default=DEFAULT_POWER_FACTOR, help="power factor for missing Q (default 0.95)")
    p.add_argument("--resolution", type=int, default=60, help="working resolution in minutes (default 60)")


def _add_run_opts(p: argparse.ArgumentParser, default_risk: Sequence[float] | None) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument(
        "--risk",
        type=_risk,
        action="append",
        help="risk level, repeatable" + (f" (default {', '.join(f'{e:g}' for e in default_risk)})" if default_risk else ""),
    )
    p.add_argument("--scenarios", type=int, dest="n_scenarios", help="number of scenarios (default 200)")
    p.add_argument("--sigma", type=float, dest="sigma_fraction", help="noise std as a fraction of the mean (default 0.3)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--pf", type=float, dest="power_factor", help="power factor for missing Q (default 0.95)")
    p.add_argument("--resolution", type=int, help="working resolution in minutes (default 60)")
    p.add_argument("--demo-date", help="day D to predict and evaluate, YYYY-MM-DD")
    p.add_argument("--tol-kw", type=float, help="confusion-matrix threshold in kW (default 0.1)")
    p.add_argument("--thermal", choices=("exact", "octagon"), help="thermal constraint model in the LP")
    p.add_argument("--workers", type=int, help="parallel scenario solver processes")


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit code 2 is reserved for infeasibility
    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flexneeds", description="Flexibility needs assessment for radial LV networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reduce", help="reduce a network to its observable skeleton")
    _add_network(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("measurements", help="validate measurements and aggregate loads on the reduced network")
    _add_network(p)
    _add_measurement_opts(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--day", help="restrict the aggregated loads to one day, YYYY-MM-DD")

    p = sub.add_parser("scenarios", help="generate load scenarios from one day of measurements (D-2)")
    _add_network(p)
    _add_measurement_opts(p)
    p.add_argument("--day", required=True, help="the D-2 day used as the mean profile, YYYY-MM-DD")
    p.add_argument("--n-scenarios", type=int, default=200)
    p.add_argument("--sigma", type=float, default=0.30, help="noise std as a fraction of the mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="scenario file (.csv or .npz)")

    p = sub.add_parser("fna", help="solve the per-scenario LP and aggregate at each risk level")
    _add_network(p)
    p.add_argument("--scenarios", required=True, help="scenario file written by 'scenarios'")
    p.add_argument("--risk", type=_risk, action="append", help="risk level, repeatable (default 0.25)")
    p.add_argument("--thermal", choices=("exact", "octagon"), default="exact")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="score predicted against actual flexibility needs")
    p.add_argument("--predicted", required=True, action="append", help="FlexNeeds CSV, repeatable")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--actual", help="actual FlexNeeds CSV")
    src.add_argument("--network", help="network JSON; actual needs are computed from --measurements on --day")
    p.add_argument("--measurements")
    p.add_argument("--day", help="realized day, YYYY-MM-DD")
    p.add_argument("--pf", type=float, default=DEFAULT_POWER_FACTOR)
    p.add_argument("--resolution", type=int, default=60)
    p.add_argument("--rating-rule", choices=("max", "min"), default="max")
    p.add_argument("--thermal", choices=("exact", "octagon"), default="exact")
    p.add_argument("--tol-kw", type=float, default=DEFAULT_TOL_KW)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sweep", help="full pipeline over a list of risk levels")
    p.add_argument("--network")
    p.add_argument("--measurements")
    _add_run_opts(p, TABLE_RISK_LEVELS)

    p = sub.add_parser("powerflow", help="dump an operating point as CSV for plotting")
    _add_network(p)
    _add_measurement_opts(p)
    p.add_argument("--day", required=True)
    p.add_argument("--model", choices=("linear", "sweep"), default="sweep")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("demo", help="full pipeline on a shipped synthetic fixture")
    p.add_argument("--fixture", choices=sorted(SPECS), default="mlq0094")
    _add_run_opts(p, TABLE_RISK_LEVELS)
    return parser


def _reduced(args: argparse.Namespace):
    original = load_network(args.network)
    return original, reduce_network(original, rating_rule=args.rating_rule)


def _prepared(args: argparse.Namespace, reduced):
    raw = load_measurements(args.measurements, locations=[m.id for m in reduced.net.measurement_locations])
    return prepare_measurements(raw, reduced.net, args.pf, args.resolution)


def _day(text: str) -> np.datetime64:
    try:
        return np.datetime64(text, "m")
    except ValueError as exc:
        raise ConfigError(f"invalid date {text!r}") from exc


def cmd_reduce(args: argparse.Namespace) -> int:
    original, reduced = _reduced(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = write_reduction(out, original, reduced)
    print(paths[2].read_text(), end="")
    # re-reducing a reduced file reports every leaf measurement; only warn on real reductions
    level = logging.WARNING if len(reduced.net.buses) < len(original.buses) else logging.INFO
    for note in reduced.notes:
        log.log(level, "network-reduction: %s", note)
    return EXIT_OK


def cmd_measurements(args: argparse.Namespace) -> int:
    _, reduced = _reduced(args)
    series = _prepared(args, reduced)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.day:
        series = day_window(series, _day(args.day), args.resolution)
    write_measurements(series.values(), out / "measurements_prepared.csv")
    agg = aggregate_measured_flows(series, reduced)
    T, L = agg.p_kw.shape
    t_idx, l_idx = np.meshgrid(np.arange(T), np.arange(L), indexing="ij")
    pd.DataFrame(
        {
            "timestamp": pd.to_datetime(agg.timestamps[t_idx.ravel()]).strftime("%Y-%m-%dT%H:%M:%S"),
            "bus": np.asarray(agg.bus_ids)[l_idx.ravel()],
            "p_kw": agg.p_kw.ravel(),
            "q_kvar": np.zeros(T * L) if agg.q_kvar is None else agg.q_kvar.ravel(),
        }
    ).to_csv(out / "aggregated_loads.csv", index=False, float_format="%.10g")
    print(f"{len(series)} locations, {T} samples at {agg.resolution} min -> {out}")
    return EXIT_OK


def cmd_scenarios(args: argparse.Namespace) -> int:
    _, reduced = _reduced(args)
    series = day_window(_prepared(args, reduced), _day(args.day), args.resolution)
    agg = aggregate_measured_flows(series, reduced)
    scen = generate_scenarios(agg.p_kw, args.sigma, args.n_scenarios, args.seed, mean_q_kvar=agg.q_kvar, bus_ids=agg.bus_ids)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    meta = write_scenarios(scen, args.out)
    print(f"{scen.n_scenarios} scenarios x {scen.timesteps} timesteps x {len(scen.bus_ids)} load points -> {args.out} ({meta.name})")
    return EXIT_OK


def cmd_fna(args: argparse.Namespace) -> int:
    _, reduced = _reduced(args)
    net = reduced.net
    scen = read_scenarios(args.scenarios)
    missing = [b for b in scen.bus_ids if b not in net.bus_index]
    if missing:
        raise ConfigError(f"scenario load point {missing[0]!r} is not a bus of the reduced network")
    p, q = scenario_bus_loads(net, scen)
    solves = solve_scenarios(net, p, q, workers=args.workers, thermal=args.thermal)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    levels = sorted(args.risk or [0.25])
    for eps in levels:
        pred = aggregate_chance_constrained(solves, eps, tuple(net.bus_ids))
        tag = f"{eps:g}"
        write_flex_csv(pred, out / f"flex_predicted_eps{tag}.csv")
        write_run_meta(out / f"flex_predicted_eps{tag}.json", pred)
        print(f"eps={tag}: discarded {pred.discarded}/{pred.n_scenarios} per timestep, total {pred.temporal_kw().sum():.2f} kW")
    return EXIT_OK


def _risk_of(path: Path) -> float:
    meta = path.with_suffix(".json")
    if meta.exists():
        return float(json.loads(meta.read_text())["risk_level"])
    return 0.0


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.actual:
        actual = read_flex_csv(args.actual, kind="actual")
    else:
        if not (args.measurements and args.day):
            raise ConfigError("--network needs --measurements and --day to compute actual needs")
        _, reduced = _reduced(args)
        series = day_window(_prepared(args, reduced), _day(args.day), args.resolution)
        rp, rq = aggregate_measured_flows(series, reduced).to_bus_arrays(reduced.net)
        actual = compute_actual_flex(reduced.net, rp, rq, thermal=args.thermal)
    preds = sorted(
        (read_flex_csv(p, risk_level=_risk_of(Path(p))) for p in args.predicted), key=lambda f: f.risk_level
    )
    reports = []
    for pred in preds:
        if pred.bus_ids != actual.bus_ids:
            raise ConfigError("predicted and actual needs are on different bus sets")
        reports.append(kpi_report(pred, actual, args.tol_kw))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_flex_csv(actual, out / "flex_actual.csv")
    (out / "kpi.json").write_text(json.dumps([r.as_dict() for r in reports], indent=2) + "\n")
    (out / "kpi_table.md").write_text(kpi_table_markdown(reports))
    (out / "kpi_table.csv").write_text(kpi_table_csv(reports))
    print(kpi_table_markdown(reports), end="")
    return EXIT_OK


def _run_config(args: argparse.Namespace, network: str | None, measurements: str | None, out_default: str) -> RunConfig:
    keys = ("n_scenarios", "sigma_fraction", "seed", "power_factor", "resolution", "demo_date", "tol_kw", "thermal", "workers")
    overrides = {k: getattr(args, k) for k in keys}
    overrides["risk_levels"] = sorted(args.risk) if args.risk else None
    overrides["output_dir"] = args.out_dir
    cfg = load_config(args.config, network=network, measurements=measurements, **overrides)
    if args.risk is None and args.config is None:
        cfg = with_overrides(cfg, risk_levels=list(TABLE_RISK_LEVELS))
    if args.out_dir is None and args.config is None:
        cfg = with_overrides(cfg, output_dir=out_default)
    return cfg


def _report(cfg: RunConfig) -> int:
    res = run_pipeline(cfg)
    print(Path(cfg.output_dir, "size_report.txt").read_text(), end="")
    if res.reports:
        print(kpi_table_markdown(res.reports), end="")
    for pred in res.predicted:
        if pred.infeasible:
            log.warning("fna-opf: eps=%g: infeasible scenarios at %d timestep(s)", pred.risk_level, len(pred.infeasible))
    print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    return _report(_run_config(args, args.network, args.measurements, "fna_output"))


def cmd_demo(args: argparse.Namespace) -> int:
    net, meas = fixture_paths(args.fixture)
    return _report(_run_config(args, str(net), str(meas), f"demo_{args.fixture}"))


def cmd_powerflow(args: argparse.Namespace) -> int:
    _, reduced = _reduced(args)
    net = reduced.net
    series = day_window(_prepared(args, reduced), _day(args.day), args.resolution)
    p, q = aggregate_measured_flows(series, reduced).to_bus_arrays(net)
    if args.model == "sweep":
        op = sweep_flow(net, p, q)
        if not op.converged:
            log.warning("powerflow: sweep did not converge")
    else:
        op = linearized_flow(net, p, q)
    loading = loading_percent(op, net)
    rows = []
    for t in range(p.shape[0]):
        for i, b in enumerate(net.buses):
            rows.append([t, "bus", b.id, op.v_pu[t, i], np.nan, np.nan, np.nan])
        for e, br in enumerate(net.branches):
            rows.append([t, "branch", br.id, np.nan, op.p_kw[t, e], op.q_kvar[t, e], loading[t, e]])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=["timestep", "element", "id", "v_pu", "p_kw", "q_kvar", "loading_pct"]).to_csv(
        args.out, index=False, float_format="%.10g"
    )
    print(f"{args.model} operating point, {p.shape[0]} timesteps -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "reduce": cmd_reduce,
    "measurements": cmd_measurements,
    "scenarios": cmd_scenarios,
    "fna": cmd_fna,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "powerflow": cmd_powerflow,
    "demo": cmd_demo,
}


def _module_of(exc: BaseException) -> str:
    for cls, name in _MODULES:
        if isinstance(exc, cls):
            return name
    return "input"


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InfeasibleError as exc:
        print(f"flexneeds: {_module_of(exc)}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"flexneeds: {_module_of(exc)}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"flexneeds: {_module_of(exc)}: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - last resort
        print(f"flexneeds: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
