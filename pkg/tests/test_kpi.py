import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexneeds.kpi import (
    KpiReport,
    confusion_counts,
    kpi_report,
    kpi_s1,
    kpi_s2,
    kpi_s3,
    kpi_table_csv,
    kpi_table_markdown,
    risk_sweep,
)
from flexneeds.opf import FlexNeeds, ScenarioSolve, aggregate_chance_constrained
from kpi_cases import KPI_CASES


@pytest.mark.parametrize("pred, act, s1, s2, s3, unit", KPI_CASES)
def test_hand_grids(pred, act, s1, s2, s3, unit):
    assert kpi_s1(pred, act) == s1
    assert kpi_s2(pred, act) == s2
    got = kpi_s3(pred, act)
    assert got.unit == unit
    assert got.value == pytest.approx(s3, rel=1e-15, abs=1e-15)


def test_whole_percent_rounding():
    act = np.zeros((1, 20))
    act[0, :14] = 1.0
    pred = act.copy()
    pred[0, 0] = 0.5
    assert f"{kpi_s1(pred, act):.0f}" == "93"


def test_grid_mismatch():
    with pytest.raises(ValueError, match="grid mismatch"):
        kpi_s1(np.zeros((2, 2)), np.zeros((2, 3)))


def test_confusion_exhaustive():
    pred = np.array([[1.0, 1.0], [0.0, 0.0]])
    act = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert confusion_counts(pred, act) == (1, 1, 1, 1)


def test_confusion_tolerance():
    pred = np.array([[0.05, 0.2]])
    act = np.array([[0.05, 0.0]])
    assert confusion_counts(pred, act) == (0, 1, 0, 1)
    assert confusion_counts(pred, act, tol_kw=0.0) == (1, 1, 0, 0)
    with pytest.raises(ValueError):
        confusion_counts(pred, act, tol_kw=-1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=30))
def test_perfect_prediction(values):
    grid = np.array([values])
    r = kpi_report(FlexNeeds(tuple(f"b{i}" for i in range(len(values))), grid, kind="predicted"),
                   FlexNeeds(tuple(f"b{i}" for i in range(len(values))), grid, kind="actual"), tol_kw=0.0)
    assert r.fp == 0 and r.fn == 0
    assert r.tp + r.fp + r.fn + r.tn == grid.size
    if np.abs(grid).sum() > 0:
        assert (r.s1, r.s2, r.s3) == (100.0, 0.0, 0.0)


def _solves(rng, S=20, T=4, B=3):
    vals = rng.uniform(-5, 5, size=(S, T, B)) * (rng.uniform(size=(S, T, B)) > 0.4)
    return [ScenarioSolve(s, vals[s], np.ones(T, bool), np.abs(vals[s]).sum(1)) for s in range(S)], vals


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_sweep_monotone(seed):
    rng = np.random.default_rng(seed)
    solves, vals = _solves(rng)
    actual = FlexNeeds(("a", "b", "c"), vals[int(rng.integers(20))], kind="actual")
    reports, _ = risk_sweep(solves, actual, (0.0, 0.1, 0.3, 0.5, 0.7))
    for lo, hi in zip(reports, reports[1:]):
        if lo.s1 is not None:
            assert lo.s1 >= hi.s1 and lo.s2 >= hi.s2 - 1e-9
        assert lo.s3 >= hi.s3 - 1e-9
    # the realized profile is one of the scenarios, so the robust envelope misses nothing
    assert confusion_counts(aggregate_chance_constrained(solves, 0.0), actual, tol_kw=0.0)[2] == 0


def test_sweep_requires_sorted_levels():
    solves, vals = _solves(np.random.default_rng(0))
    with pytest.raises(ValueError, match="sorted"):
        risk_sweep(solves, FlexNeeds(("a", "b", "c"), vals[0], kind="actual"), (0.3, 0.1))


def test_single_level_single_column():
    solves, vals = _solves(np.random.default_rng(1))
    reports, preds = risk_sweep(solves, FlexNeeds(("a", "b", "c"), vals[0], kind="actual"), (0.25,))
    assert len(reports) == len(preds) == 1
    header = kpi_table_markdown(reports).splitlines()[0]
    assert header == "| Risk level | 0.25 |"


def test_table_formats():
    reports = [
        KpiReport(0.0, None, None, 164.2, "kW", 0, 3, 0, 21),
        KpiReport(0.25, None, None, 0.0, "kW", 0, 0, 0, 24),
    ]
    md = kpi_table_markdown(reports)
    assert "| S1 (%) | / | / |" in md
    assert "| S3 [kW] | 164 | 0 |" in md
    csv = kpi_table_csv(reports).splitlines()
    assert csv[0].startswith("risk_level,s1_pct")
    assert csv[1] == "0,,,164.2,kW,0,3,0,21"
    pct = [KpiReport(0.7, 7.0, -30.0, -39.4, "%", 1, 0, 13, 10)]
    assert "| S3 (%) | -39 |" in kpi_table_markdown(pct)
