"""Persistence-model Monte Carlo load scenarios.

The D-2 aggregated load profile is taken as the expected profile and every
(scenario, timestep, load point) cell is perturbed independently with zero-mean
Gaussian noise whose standard deviation is a fixed fraction of |mean|.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

DEFAULT_SCENARIOS = 200
DEFAULT_SIGMA_FRACTION = 0.30


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """``p_kw``/``q_kvar`` have shape (S, T, L); scenario 0 is the unperturbed mean."""

    bus_ids: tuple[str, ...]
    p_kw: np.ndarray
    q_kvar: np.ndarray
    seed: int
    sigma_fraction: float

    @property
    def n_scenarios(self) -> int:
        return self.p_kw.shape[0]

    @property
    def timesteps(self) -> int:
        return self.p_kw.shape[1]

    def metadata(self) -> dict:
        return {
            "n_scenarios": self.n_scenarios,
            "timesteps": self.timesteps,
            "load_points": list(self.bus_ids),
            "seed": self.seed,
            "sigma_fraction": self.sigma_fraction,
            "noise": "independent gaussian, std = sigma_fraction * |mean|",
        }


def generate_scenarios(
    mean_p_kw: np.ndarray,
    sigma_fraction: float = DEFAULT_SIGMA_FRACTION,
    n_scenarios: int = DEFAULT_SCENARIOS,
    seed: int = 0,
    mean_q_kvar: np.ndarray | None = None,
    bus_ids: tuple[str, ...] | list[str] | None = None,
) -> ScenarioSet:
    """Draw ``n_scenarios`` perturbed copies of a (T, L) mean profile.

    Q follows P with the same relative perturbation, so each cell keeps the
    power factor of its mean.
    """
    mean = np.asarray(mean_p_kw, dtype=float)
    if mean.ndim != 2:
        raise ValueError(f"mean profile must be (T, L), got shape {mean.shape}")
    if not np.all(np.isfinite(mean)):
        raise ValueError("mean profile contains non-finite values")
    if not sigma_fraction >= 0:
        raise ValueError(f"sigma_fraction must be >= 0, got {sigma_fraction}")
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    q_mean = np.zeros_like(mean) if mean_q_kvar is None else np.asarray(mean_q_kvar, dtype=float)
    if q_mean.shape != mean.shape or not np.all(np.isfinite(q_mean)):
        raise ValueError("mean Q profile must be finite with the same shape as P")

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_scenarios, *mean.shape))
    z[0] = 0.0
    # relative perturbation; sign(mean) keeps value = mean + sigma*|mean|*z
    rel = 1.0 + sigma_fraction * np.sign(mean) * z
    p = mean * rel
    p[0] = mean
    q = q_mean * rel
    q[0] = q_mean
    ids = tuple(bus_ids) if bus_ids is not None else tuple(f"L{i}" for i in range(mean.shape[1]))
    if len(ids) != mean.shape[1]:
        raise ValueError("bus_ids length does not match the number of load points")
    return ScenarioSet(ids, p, q, int(seed), float(sigma_fraction))


def write_scenarios(scen: ScenarioSet, path: str | Path) -> Path:
    """Write the long-format CSV (or ``.npz`` by suffix) plus ``<stem>.meta.json``."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, bus_ids=np.array(scen.bus_ids), p_kw=scen.p_kw, q_kvar=scen.q_kvar)
    else:
        S, T, L = scen.p_kw.shape
        s_idx, t_idx, l_idx = np.meshgrid(np.arange(S), np.arange(T), np.arange(L), indexing="ij")
        pd.DataFrame(
            {
                "scenario": s_idx.ravel(),
                "timestep": t_idx.ravel(),
                "bus": np.asarray(scen.bus_ids)[l_idx.ravel()],
                "p_kw": scen.p_kw.ravel(),
                "q_kvar": scen.q_kvar.ravel(),
            }
        ).to_csv(path, index=False, float_format="%.17g")
    meta = path.with_name(path.stem + ".meta.json")
    meta.write_text(json.dumps(scen.metadata(), indent=2) + "\n")
    return meta


def read_scenarios(path: str | Path) -> ScenarioSet:
    path = Path(path)
    meta = json.loads(path.with_name(path.stem + ".meta.json").read_text())
    if path.suffix == ".npz":
        with np.load(path) as z:
            ids = tuple(str(b) for b in z["bus_ids"])
            p, q = z["p_kw"], z["q_kvar"]
    else:
        df = pd.read_csv(path, dtype={"bus": str}, float_precision="round_trip")
        ids = tuple(meta["load_points"])
        S, T, L = meta["n_scenarios"], meta["timesteps"], len(ids)
        col = {b: i for i, b in enumerate(ids)}
        p = np.zeros((S, T, L))
        q = np.zeros((S, T, L))
        li = df["bus"].map(col).to_numpy()
        p[df["scenario"], df["timestep"], li] = df["p_kw"].to_numpy()
        q[df["scenario"], df["timestep"], li] = df["q_kvar"].to_numpy()
    return ScenarioSet(ids, p, q, int(meta["seed"]), float(meta["sigma_fraction"]))
