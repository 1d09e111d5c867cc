"""Flexibility needs assessment for radial LV networks with sparse measurements."""

from .kpi import KpiReport, confusion_counts, kpi_s1, kpi_s2, kpi_s3, risk_sweep
from .measurements import (
    MeasurementSeries,
    approximate_power_from_current,
    fill_reactive,
    load_measurements,
    resample,
)
from .network import Branch, Bus, MeasurementLocation, NetworkModel, Transformer, load_network, validate_orientation
from .opf import (
    FlexNeeds,
    ScenarioSolve,
    aggregate_chance_constrained,
    compute_actual_flex,
    solve_scenario_opf,
)
from .powerflow import DniReport, OperatingPoint, detect_dni, linearized_flow, sweep_flow
from .reduction import ReducedNetwork, aggregate_measured_flows, reduce_network
from .scenarios import ScenarioSet, generate_scenarios

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Bus",
    "DniReport",
    "FlexNeeds",
    "KpiReport",
    "MeasurementLocation",
    "MeasurementSeries",
    "NetworkModel",
    "OperatingPoint",
    "ReducedNetwork",
    "ScenarioSet",
    "ScenarioSolve",
    "Transformer",
    "aggregate_chance_constrained",
    "aggregate_measured_flows",
    "approximate_power_from_current",
    "compute_actual_flex",
    "confusion_counts",
    "detect_dni",
    "fill_reactive",
    "generate_scenarios",
    "kpi_s1",
    "kpi_s2",
    "kpi_s3",
    "linearized_flow",
    "load_measurements",
    "load_network",
    "reduce_network",
    "resample",
    "risk_sweep",
    "solve_scenario_opf",
    "sweep_flow",
    "validate_orientation",
]
