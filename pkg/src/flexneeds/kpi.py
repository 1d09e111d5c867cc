"""Prediction-quality KPIs for flexibility needs.

* S1 [%]  share of cells with an actual need where the prediction covers it
* S2 [kW] total over-prediction on cells with an actual need
* S3      total over-prediction relative to the total actual need [%], or the
          total predicted need [kW] when nothing was actually needed

Flexibility direction is ignored: all comparisons use magnitudes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .opf import FlexNeeds, ScenarioSolve, aggregate_chance_constrained

DEFAULT_TOL_KW = 0.1
TABLE_RISK_LEVELS = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7)


class S3(NamedTuple):
    value: float
    unit: str  # "%" or "kW"


@dataclass(frozen=True)
class KpiReport:
    risk_level: float
    s1: float | None
    s2: float | None
    s3: float
    s3_unit: str
    tp: int
    fp: int
    fn: int
    tn: int

    def as_dict(self) -> dict:
        return asdict(self)


def _magnitudes(pred: FlexNeeds | np.ndarray, act: FlexNeeds | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.abs(pred.values if isinstance(pred, FlexNeeds) else np.asarray(pred, dtype=float))
    a = np.abs(act.values if isinstance(act, FlexNeeds) else np.asarray(act, dtype=float))
    if p.shape != a.shape:
        raise ValueError(f"grid mismatch: predicted {p.shape} vs actual {a.shape}")
    return p, a


def kpi_s1(pred: FlexNeeds | np.ndarray, act: FlexNeeds | np.ndarray) -> float | None:
    """Percent of needed cells covered; ``None`` when nothing was needed."""
    p, a = _magnitudes(pred, act)
    needed = a > 0
    if not needed.any():
        return None
    return 100.0 * np.count_nonzero(p[needed] >= a[needed]) / np.count_nonzero(needed)


def kpi_s2(pred: FlexNeeds | np.ndarray, act: FlexNeeds | np.ndarray) -> float | None:
    p, a = _magnitudes(pred, act)
    needed = a > 0
    if not needed.any():
        return None
    return float(np.sum(p[needed] - a[needed]))


def kpi_s3(pred: FlexNeeds | np.ndarray, act: FlexNeeds | np.ndarray) -> S3:
    p, a = _magnitudes(pred, act)
    total_act = a.sum()
    if total_act > 0:
        return S3(float(100.0 * (p.sum() - total_act) / total_act), "%")
    return S3(float(p.sum()), "kW")


def confusion_counts(
    pred: FlexNeeds | np.ndarray, act: FlexNeeds | np.ndarray, tol_kw: float = DEFAULT_TOL_KW
) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) over cells; a cell counts as needing flexibility above ``tol_kw``."""
    if tol_kw < 0:
        raise ValueError("tol_kw must be >= 0")
    p, a = _magnitudes(pred, act)
    needed = a > tol_kw
    flagged = p > tol_kw
    return (
        int(np.count_nonzero(needed & flagged)),
        int(np.count_nonzero(~needed & flagged)),
        int(np.count_nonzero(needed & ~flagged)),
        int(np.count_nonzero(~needed & ~flagged)),
    )


def kpi_report(
    pred: FlexNeeds, act: FlexNeeds, tol_kw: float = DEFAULT_TOL_KW, risk_level: float | None = None
) -> KpiReport:
    s3 = kpi_s3(pred, act)
    tp, fp, fn, tn = confusion_counts(pred, act, tol_kw)
    return KpiReport(
        risk_level=pred.risk_level if risk_level is None else risk_level,
        s1=kpi_s1(pred, act),
        s2=kpi_s2(pred, act),
        s3=s3.value,
        s3_unit=s3.unit,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


def risk_sweep(
    solves: Sequence[ScenarioSolve],
    actual: FlexNeeds,
    risk_levels: Sequence[float] = TABLE_RISK_LEVELS,
    tol_kw: float = DEFAULT_TOL_KW,
) -> tuple[list[KpiReport], list[FlexNeeds]]:
    """Aggregate the same scenario solves at each risk level and score against ``actual``."""
    levels = list(risk_levels)
    if levels != sorted(levels):
        raise ValueError("risk levels must be sorted ascending")
    reports, preds = [], []
    for eps in levels:
        pred = aggregate_chance_constrained(solves, eps, actual.bus_ids)
        preds.append(pred)
        reports.append(kpi_report(pred, actual, tol_kw, eps))
    return reports, preds


def _fmt(x: float | None) -> str:
    return "/" if x is None else f"{x:.0f}"


def kpi_table_rows(reports: Sequence[KpiReport]) -> list[list[str]]:
    unit = reports[0].s3_unit if reports else "%"
    return [
        ["Risk level"] + [f"{r.risk_level:g}" for r in reports],
        ["S1 (%)"] + [_fmt(r.s1) for r in reports],
        ["S2 [kW]"] + [_fmt(r.s2) for r in reports],
        [f"S3 [{unit}]" if unit == "kW" else "S3 (%)"] + [_fmt(r.s3) for r in reports],
        ["TP"] + [str(r.tp) for r in reports],
        ["FP"] + [str(r.fp) for r in reports],
        ["FN"] + [str(r.fn) for r in reports],
        ["TN"] + [str(r.tn) for r in reports],
    ]


def kpi_table_markdown(reports: Sequence[KpiReport]) -> str:
    rows = kpi_table_rows(reports)
    out = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
    out += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(out) + "\n"


def kpi_table_csv(reports: Sequence[KpiReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["risk_level", "s1_pct", "s2_kw", "s3", "s3_unit", "tp", "fp", "fn", "tn"])
    for r in reports:
        w.writerow(
            [
                f"{r.risk_level:g}",
                "" if r.s1 is None else repr(r.s1),
                "" if r.s2 is None else repr(r.s2),
                repr(r.s3),
                r.s3_unit,
                r.tp,
                r.fp,
                r.fn,
                r.tn,
            ]
        )
    return buf.getvalue()
