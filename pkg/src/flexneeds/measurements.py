"""Measurement time series: CSV ingestion, current-to-power approximation, resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

COLUMNS = ("timestamp", "location_id", "p_kw", "q_kvar", "i_a")
DEFAULT_POWER_FACTOR = 0.95


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MeasurementSeries:
    """Uniformly sampled flow measurements at one location.

    Timestamps mark interval starts. Absent quantities are ``None``; P is in
    kW (positive = consumption downstream), Q in kvar, current in A.
    """

    location_id: str
    resolution: int
    timestamps: np.ndarray
    p_kw: np.ndarray | None = None
    q_kvar: np.ndarray | None = None
    i_a: np.ndarray | None = None
    approximated: bool = False

    def __post_init__(self) -> None:
        ts = self.timestamps
        if ts.dtype != "datetime64[m]":
            object.__setattr__(self, "timestamps", ts.astype("datetime64[m]"))
        if self.p_kw is None and self.i_a is None:
            raise MeasurementError(f"{self.location_id}: need P or I_abs")
        n = len(self.timestamps)
        for name in ("p_kw", "q_kvar", "i_a"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise MeasurementError(f"{self.location_id}: {name} length {len(arr)} != {n}")
        if n > 1:
            step = np.diff(self.timestamps).astype(int)
            if np.any(step != self.resolution):
                k = int(np.flatnonzero(step != self.resolution)[0])
                raise MeasurementError(
                    f"{self.location_id}: non-uniform spacing at {self.timestamps[k + 1]}"
                )

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def current_only(self) -> bool:
        return self.p_kw is None and self.i_a is not None

    def window(self, start: np.datetime64 | str, periods: int) -> MeasurementSeries:
        """Slice ``periods`` samples beginning at ``start``."""
        start = np.datetime64(start, "m")
        hit = np.flatnonzero(self.timestamps == start)
        if len(hit) == 0 or hit[0] + periods > len(self):
            raise MeasurementError(
                f"{self.location_id}: no coverage for {periods} samples from {start}"
            )
        sl = slice(int(hit[0]), int(hit[0]) + periods)
        return replace(
            self,
            timestamps=self.timestamps[sl],
            p_kw=None if self.p_kw is None else self.p_kw[sl],
            q_kvar=None if self.q_kvar is None else self.q_kvar[sl],
            i_a=None if self.i_a is None else self.i_a[sl],
        )


def load_measurements(
    path: str | Path, locations: Iterable[str] | None = None
) -> dict[str, MeasurementSeries]:
    """Read the long-format measurement CSV into one series per location.

    Empty cells mark absent quantities. A quantity must be either present at
    every sample of a location or absent throughout.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"measurement file not found: {path}")
    df = pd.read_csv(path, dtype={"location_id": str}, float_precision="round_trip")
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise MeasurementError(f"{path}: missing column(s) {missing}")
    ts = pd.to_datetime(df["timestamp"], format="ISO8601")
    if ts.dt.tz is not None:
        ts = ts.dt.tz_convert("UTC").dt.tz_localize(None)
    df = df.assign(timestamp=ts)

    known = None if locations is None else set(locations)
    out: dict[str, MeasurementSeries] = {}
    for loc, grp in df.groupby("location_id", sort=False):
        if known is not None and loc not in known:
            raise MeasurementError(f"{path}: unknown location id {loc!r}")
        grp = grp.sort_values("timestamp", kind="stable")
        stamps = grp["timestamp"].to_numpy().astype("datetime64[m]")
        dup = np.flatnonzero(stamps[1:] == stamps[:-1])
        if len(dup):
            raise MeasurementError(f"{loc}: duplicate timestamp {stamps[dup[0]]}")
        if len(stamps) < 2:
            raise MeasurementError(f"{loc}: need at least two samples to infer resolution")
        resolution = int((stamps[1] - stamps[0]).astype(int))
        cols = {c: _column(grp, c, loc) for c in ("p_kw", "q_kvar", "i_a")}
        out[str(loc)] = MeasurementSeries(str(loc), resolution, stamps, **cols)
    return out


def _column(grp: pd.DataFrame, col: str, loc: str) -> np.ndarray | None:
    values = grp[col].to_numpy(dtype=float)
    absent = np.isnan(values)
    if absent.all():
        return None
    if absent.any():
        k = int(np.flatnonzero(absent)[0])
        raise MeasurementError(f"{loc}: missing {col} at {grp['timestamp'].iloc[k]}")
    return values


def write_measurements(series: Iterable[MeasurementSeries], path: str | Path) -> None:
    frames = []
    for s in series:
        n = len(s)
        frames.append(
            pd.DataFrame(
                {
                    "timestamp": pd.to_datetime(s.timestamps).strftime("%Y-%m-%dT%H:%M:%S"),
                    "location_id": s.location_id,
                    "p_kw": s.p_kw if s.p_kw is not None else np.full(n, np.nan),
                    "q_kvar": s.q_kvar if s.q_kvar is not None else np.full(n, np.nan),
                    "i_a": s.i_a if s.i_a is not None else np.full(n, np.nan),
                }
            )
        )
    pd.concat(frames).to_csv(path, index=False, float_format="%.10g")


def approximate_power_from_current(series: MeasurementSeries, nominal_voltage: float) -> MeasurementSeries:
    """Fill P from |I| x V_nominal.

    The result overestimates active power (the current carries the reactive
    part too) and cannot see direction, so net injections show up as load.
    The returned series is tagged ``approximated``.
    """
    if series.i_a is None:
        raise MeasurementError(f"{series.location_id}: no current measurement to convert")
    if series.p_kw is not None:
        raise MeasurementError(f"{series.location_id}: P already measured")
    if np.any(series.i_a < 0):
        raise MeasurementError(f"{series.location_id}: negative |I| values")
    return replace(series, p_kw=series.i_a * nominal_voltage / 1000.0, approximated=True)


def fill_reactive(series: MeasurementSeries, power_factor: float = DEFAULT_POWER_FACTOR) -> MeasurementSeries:
    """Derive Q from P at a fixed lagging power factor when Q is absent."""
    if series.q_kvar is not None:
        return series
    if series.p_kw is None:
        raise MeasurementError(f"{series.location_id}: cannot derive Q without P")
    if not 0 < power_factor <= 1:
        raise MeasurementError(f"power factor must be in (0, 1], got {power_factor}")
    return replace(series, q_kvar=series.p_kw * math.tan(math.acos(power_factor)))


def resample(series: MeasurementSeries, target_resolution: int) -> MeasurementSeries:
    """Average into coarser intervals; energy over the covered window is conserved."""
    src = series.resolution
    if target_resolution < src or target_resolution % src:
        raise MeasurementError(
            f"target resolution {target_resolution} min is not a multiple of {src} min"
        )
    k = target_resolution // src
    if k == 1:
        return series
    first = series.timestamps[0].astype(int)
    if first % target_resolution or len(series) % k:
        raise MeasurementError(
            f"{series.location_id}: incomplete coverage of {target_resolution}-min intervals"
        )

    def block_mean(a: np.ndarray | None) -> np.ndarray | None:
        return None if a is None else a.reshape(-1, k).mean(axis=1)

    return replace(
        series,
        resolution=target_resolution,
        timestamps=series.timestamps[::k],
        p_kw=block_mean(series.p_kw),
        q_kvar=block_mean(series.q_kvar),
        i_a=block_mean(series.i_a),
    )
