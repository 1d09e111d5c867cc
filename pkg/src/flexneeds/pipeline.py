"""End-to-end flexibility needs assessment run.

load network -> reduce -> aggregate D-2 flows -> scenarios -> per-scenario LP
-> chance-constrained aggregation per risk level -> (optional) actual needs
from demo-day measurements -> KPIs. Every intermediate lands in ``output_dir``.
"""

from __future__ import annotations

import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .kpi import DEFAULT_TOL_KW, KpiReport, kpi_table_csv, kpi_table_markdown, risk_sweep
from .measurements import (
    DEFAULT_POWER_FACTOR,
    MeasurementSeries,
    approximate_power_from_current,
    fill_reactive,
    load_measurements,
    resample,
)
from .network import NetworkModel, load_network, save_network
from .opf import (
    FlexNeeds,
    ScenarioSolve,
    aggregate_chance_constrained,
    compute_actual_flex,
    post_correction_pass,
    scenario_bus_loads,
    solve_scenarios,
)
from .powerflow import linearized_flow, loading_percent
from .reduction import AggregatedLoads, ReducedNetwork, aggregate_measured_flows, reduce_network, size_report
from .scenarios import ScenarioSet, generate_scenarios, write_scenarios

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    network: str
    measurements: str
    output_dir: str = "fna_output"
    demo_date: str = "2023-09-13"
    risk_levels: list[float] = field(default_factory=lambda: [0.25])
    n_scenarios: int = 200
    sigma_fraction: float = 0.30
    seed: int = 0
    power_factor: float = DEFAULT_POWER_FACTOR
    resolution: int = 60
    rating_rule: str = "max"
    tol_kw: float = DEFAULT_TOL_KW
    thermal: str = "exact"
    workers: int = 1
    evaluate: bool = True

    def validate(self) -> None:
        for name in ("network", "measurements"):
            if not Path(getattr(self, name)).exists():
                raise ConfigError(f"{name} file not found: {getattr(self, name)}")
        if not self.risk_levels or any(not 0 <= e < 1 for e in self.risk_levels):
            raise ConfigError("risk levels must be non-empty and each in [0, 1)")
        if sorted(self.risk_levels) != list(self.risk_levels):
            raise ConfigError("risk levels must be sorted ascending")
        if self.n_scenarios < 1:
            raise ConfigError("n_scenarios must be >= 1")
        if self.sigma_fraction < 0:
            raise ConfigError("sigma_fraction must be >= 0")
        if not 0 < self.power_factor <= 1:
            raise ConfigError("power_factor must be in (0, 1]")
        if self.rating_rule not in ("max", "min"):
            raise ConfigError("rating_rule must be 'max' or 'min'")
        if self.thermal not in ("exact", "octagon"):
            raise ConfigError("thermal must be 'exact' or 'octagon'")
        if self.tol_kw < 0:
            raise ConfigError("tol_kw must be >= 0")

    @classmethod
    def from_file(cls, path: str | Path, **overrides: Any) -> RunConfig:
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)


@dataclass
class PipelineResult:
    original: NetworkModel
    reduced: ReducedNetwork
    d2_loads: AggregatedLoads
    scenarios: ScenarioSet
    solves: list[ScenarioSolve]
    predicted: list[FlexNeeds]
    actual: FlexNeeds | None = None
    realized: AggregatedLoads | None = None
    reports: list[KpiReport] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)


def prepare_measurements(
    series: dict[str, MeasurementSeries], net: NetworkModel, power_factor: float, resolution: int
) -> dict[str, MeasurementSeries]:
    """Approximate current-only locations, fill Q, resample to ``resolution`` minutes."""
    out = {}
    for m in net.measurement_locations:
        if m.id not in series:
            raise ConfigError(f"no measurements for location {m.id!r}")
        s = series[m.id]
        if s.current_only:
            v_nom = net.bus(net.branch(m.branch_id).from_bus).nominal_voltage
            s = approximate_power_from_current(s, v_nom)
            log.warning("%s: P approximated from |I| (overestimates, injections counted as load)", m.id)
        s = fill_reactive(s, power_factor)
        out[m.id] = resample(s, resolution)
    return out


def day_window(series: dict[str, MeasurementSeries], day: np.datetime64, resolution: int) -> dict[str, MeasurementSeries]:
    periods = 24 * 60 // resolution
    return {k: s.window(day, periods) for k, s in series.items()}


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    files: list[Path] = []

    def tick(name: str, t0: float) -> float:
        now = time.perf_counter()
        timings[name] = round(now - t0, 4)
        return now

    t = time.perf_counter()
    original = load_network(cfg.network)
    reduced = reduce_network(original, rating_rule=cfg.rating_rule)  # type: ignore[arg-type]
    net = reduced.net
    t = tick("reduce", t)
    files += write_reduction(out, original, reduced)

    raw = load_measurements(cfg.measurements, locations=[m.id for m in original.measurement_locations])
    series = prepare_measurements(raw, net, cfg.power_factor, cfg.resolution)
    demo = np.datetime64(cfg.demo_date, "m")
    d2 = aggregate_measured_flows(day_window(series, demo - np.timedelta64(2, "D"), cfg.resolution), reduced)
    t = tick("measurements", t)

    scen = generate_scenarios(
        d2.p_kw, cfg.sigma_fraction, cfg.n_scenarios, cfg.seed, mean_q_kvar=d2.q_kvar, bus_ids=d2.bus_ids
    )
    scen_path = out / "scenarios.csv"
    files += [scen_path, write_scenarios(scen, scen_path)]
    t = tick("scenarios", t)

    p, q = scenario_bus_loads(net, scen)
    solves = solve_scenarios(net, p, q, workers=cfg.workers, thermal=cfg.thermal)  # type: ignore[arg-type]
    t = tick("opf", t)

    result = PipelineResult(original, reduced, d2, scen, solves, [])
    actual = None
    if cfg.evaluate:
        realized = aggregate_measured_flows(day_window(series, demo, cfg.resolution), reduced)
        rp, rq = realized.to_bus_arrays(net)
        actual = compute_actual_flex(net, rp, rq, thermal=cfg.thermal)  # type: ignore[arg-type]
        result.realized, result.actual = realized, actual
        files.append(write_flex_csv(actual, out / "flex_actual.csv"))
        reports, preds = risk_sweep(solves, actual, cfg.risk_levels, cfg.tol_kw)
        result.reports = reports
        (out / "kpi.json").write_text(json.dumps([r.as_dict() for r in reports], indent=2) + "\n")
        (out / "kpi_table.md").write_text(kpi_table_markdown(reports))
        (out / "kpi_table.csv").write_text(kpi_table_csv(reports))
        files += [out / "kpi.json", out / "kpi_table.md", out / "kpi_table.csv"]
    else:
        preds = [aggregate_chance_constrained(solves, e, tuple(net.bus_ids)) for e in cfg.risk_levels]
    result.predicted = preds
    t = tick("aggregate_evaluate", t)

    for pred in preds:
        tag = f"{pred.risk_level:g}"
        files.append(write_flex_csv(pred, out / f"flex_predicted_eps{tag}.csv"))
        files.append(write_run_meta(out / f"flex_predicted_eps{tag}.json", pred))
    files += _write_plot_data(out, net, p, q, preds, actual)
    t = tick("outputs", t)

    result.files = files
    manifest = {
        "package": "flexneeds",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "timings_s": timings,
        "outputs": sorted(str(f.relative_to(out)) for f in files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return result


def write_flex_csv(flex: FlexNeeds, path: Path) -> Path:
    T, n = flex.values.shape
    t_idx, b_idx = np.meshgrid(np.arange(T), np.arange(n), indexing="ij")
    pd.DataFrame(
        {
            "timestep": t_idx.ravel(),
            "bus": np.asarray(flex.bus_ids)[b_idx.ravel()],
            "flex_up_kw": _clean(flex.up_kw).ravel(),
            "flex_down_kw": _clean(flex.down_kw).ravel(),
        }
    ).to_csv(path, index=False)
    return path


def read_flex_csv(path: str | Path, kind: str = "predicted", risk_level: float = 0.0) -> FlexNeeds:
    df = pd.read_csv(path, dtype={"bus": str}, float_precision="round_trip")
    for col in ("timestep", "bus", "flex_up_kw", "flex_down_kw"):
        if col not in df.columns:
            raise ConfigError(f"{path}: missing column {col!r}")
    buses = list(dict.fromkeys(df["bus"]))
    T = int(df["timestep"].max()) + 1
    col = {b: i for i, b in enumerate(buses)}
    up = np.zeros((T, len(buses)))
    down = np.zeros_like(up)
    bi = df["bus"].map(col).to_numpy()
    up[df["timestep"], bi] = df["flex_up_kw"].to_numpy()
    down[df["timestep"], bi] = df["flex_down_kw"].to_numpy()
    values = np.where(up >= down, up, -down)
    return FlexNeeds(tuple(buses), values, kind=kind, risk_level=risk_level, up_kw=up, down_kw=down)  # type: ignore[arg-type]


def _clean(a: np.ndarray) -> np.ndarray:
    # -0.0 would print differently from 0.0
    return np.where(a == 0, 0.0, a)


def write_run_meta(path: Path, pred: FlexNeeds) -> Path:
    meta = {
        "risk_level": pred.risk_level,
        "n_scenarios": pred.n_scenarios,
        "discarded_per_timestep": pred.discarded,
        "infeasible_scenarios": {str(t): list(s) for t, s in pred.infeasible.items()},
    }
    path.write_text(json.dumps(meta, indent=2) + "\n")
    return path


def write_reduction(out: Path, original: NetworkModel, reduced: ReducedNetwork) -> list[Path]:
    paths = [out / "reduced_network.json", out / "reduction_map.json", out / "size_report.txt"]
    save_network(reduced.net, paths[0])
    paths[1].write_text(json.dumps(reduced.mapping_dict(), indent=1) + "\n")
    paths[2].write_text(size_report(original, reduced))
    return paths


def _write_plot_data(
    out: Path,
    net: NetworkModel,
    p: np.ndarray,
    q: np.ndarray,
    preds: Sequence[FlexNeeds],
    actual: FlexNeeds | None,
) -> list[Path]:
    """Temporal and locational flexibility totals and a scenario loading fan chart."""
    T = p.shape[1]
    temporal = {"timestep": np.arange(T)}
    locational: dict[str, Any] = {"bus": list(net.bus_ids)}
    if actual is not None:
        temporal["actual_kw"] = actual.temporal_kw()
        locational["actual_kw"] = actual.locational_kw()
    for pred in preds:
        temporal[f"predicted_eps{pred.risk_level:g}_kw"] = pred.temporal_kw()
        locational[f"predicted_eps{pred.risk_level:g}_kw"] = pred.locational_kw()
    paths = [out / "flex_temporal.csv", out / "flex_locational.csv"]
    pd.DataFrame(temporal).to_csv(paths[0], index=False, float_format="%.10g")
    pd.DataFrame(locational).to_csv(paths[1], index=False, float_format="%.10g")

    quantiles = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]
    rows = []
    before = loading_percent(linearized_flow(net, p, q), net)  # (S, T, m)
    stages = [("uncorrected", before)]
    for pred in preds:
        after = loading_percent(linearized_flow(net, p - pred.values[None], q), net)
        stages.append((f"corrected_eps{pred.risk_level:g}", after))
    limit_pct = np.array([b.loading_limit_fraction for b in net.branches]) * 100.0
    for stage, load in stages:
        qs = np.quantile(load, quantiles, axis=0)  # (k, T, m)
        for e, br in enumerate(net.branches):
            for t in range(T):
                rows.append([stage, br.id, t, limit_pct[e], *qs[:, t, e]])
    fan = pd.DataFrame(rows, columns=["stage", "branch", "timestep", "limit_pct"] + [f"q{int(x * 100)}" for x in quantiles])
    paths.append(out / "loading_fan.csv")
    fan.to_csv(paths[-1], index=False, float_format="%.8g")

    check = []
    for pred in preds:
        ok = post_correction_pass(net, p, q, pred)
        kept = pred.retained if pred.retained is not None else np.ones((T, p.shape[0]), dtype=bool)
        for t in range(T):
            check.append([f"{pred.risk_level:g}", t, int(kept[t].sum()), int((ok[:, t] & kept[t]).sum())])
    paths.append(out / "post_correction.csv")
    pd.DataFrame(check, columns=["risk_level", "timestep", "retained", "retained_violation_free"]).to_csv(
        paths[-1], index=False
    )
    return paths


def load_config(path: str | Path | None, **overrides: Any) -> RunConfig:
    if path is None:
        missing = [k for k in ("network", "measurements") if overrides.get(k) is None]
        if missing:
            raise ConfigError(f"missing required setting(s): {missing}")
        return RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_file(path, **overrides)


def with_overrides(cfg: RunConfig, **kw: Any) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
