"""Verification statistics: rank histograms, drift forecast errors and particle-filter collapse."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .ensemble import Trajectories
from .grid import ModelGrid, OceanState, PhysParams
from .iewpf import standard_pf_weights
from .observations import DRIFTER, ObservationRecord, ObsErrorParams, minimal_image


def compute_rank(truth_value: float, ensemble_values, R: float, rng: np.random.Generator) -> int:
    """Rank of the truth among noise-perturbed members; ties split by a fair coin each."""
    ens = np.asarray(ensemble_values, dtype=np.float64)
    pert = ens + rng.standard_normal(ens.size) * np.sqrt(R)
    below = int(np.count_nonzero(pert < truth_value))
    ties = int(np.count_nonzero(pert == truth_value))
    if ties:
        below += int(np.count_nonzero(rng.random(ties) < 0.5))
    return below


def rank_histogram(ranks, n_e: int) -> np.ndarray:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size and (ranks.min() < 0 or ranks.max() > n_e):
        raise ValueError("rank out of range")
    return np.bincount(ranks, minlength=n_e + 1)


def uniformity_pvalue(counts) -> float:
    """Chi-square goodness of fit of the histogram against the uniform distribution."""
    counts = np.asarray(counts, dtype=np.float64)
    return float(stats.chisquare(counts).pvalue)


@dataclass
class ErrorSeries:
    times: np.ndarray
    E: np.ndarray
    RMSE: np.ndarray

    def lines(self) -> list[str]:
        return [f"{t!r},{e!r},{r!r}" for t, e, r in zip(self.times.tolist(), self.E.tolist(), self.RMSE.tolist())]

    def write(self, path: str | Path) -> None:
        Path(path).write_text("time,E,RMSE\n" + "".join(s + "\n" for s in self.lines()), encoding="utf-8")


def forecast_error(traj: Trajectories, truth_x, truth_y, Lx: float, Ly: float, truth_times=None) -> ErrorSeries:
    """E(t) against the truth and RMSE(t) against the ensemble mean, both in meters.

    truth_x, truth_y: (n_t, n_d) truth positions at traj.times.
    """
    tx = np.asarray(truth_x, dtype=np.float64)
    ty = np.asarray(truth_y, dtype=np.float64)
    if truth_times is not None and not np.array_equal(np.asarray(truth_times, dtype=np.float64), traj.times):
        raise ValueError("truth and forecast time grids differ")
    if tx.shape != (traj.x.shape[0], traj.x.shape[2]) or ty.shape != tx.shape:
        raise ValueError(f"truth positions {tx.shape} do not match trajectories {traj.x.shape}")
    dx = minimal_image(traj.x - tx[:, None, :], Lx)
    dy = minimal_image(traj.y - ty[:, None, :], Ly)
    E_d = np.mean(dx * dx + dy * dy, axis=1)
    ux, uy = traj.unwrapped(Lx, Ly)
    sx = ux - ux.mean(axis=1, keepdims=True)
    sy = uy - uy.mean(axis=1, keepdims=True)
    R_d = np.mean(sx * sx + sy * sy, axis=1)
    return ErrorSeries(traj.times.copy(), np.sqrt(E_d.mean(axis=1)), np.sqrt(R_d.mean(axis=1)))


def truth_positions(records: list[ObservationRecord], times, ids) -> tuple[np.ndarray, np.ndarray]:
    """Truth drifter positions (n_t, n_d) from an observation file."""
    lookup = {(r.time, r.id): (r.x, r.y) for r in records if r.kind == DRIFTER}
    x = np.empty((len(times), len(ids)))
    y = np.empty_like(x)
    for a, t in enumerate(times):
        for d, i in enumerate(ids):
            try:
                x[a, d], y[a, d] = lookup[(float(t), i)]
            except KeyError:
                raise ValueError(f"no truth position for drifter {i} at t={t}") from None
    return x, y


def weight_count(weights) -> int:
    """Particles whose normalized weight is at least 1/N_e (uniform weights count fully)."""
    w = np.asarray(weights)
    return int(np.count_nonzero(w >= (1.0 - 1e-9) / w.size))


def collapse_experiment(
    states: list[OceanState], obs: list[ObservationRecord], subset_sizes, trials: int, R_scale: float,
    rng: np.random.Generator, phys: PhysParams, grid: ModelGrid, obs_err: ObsErrorParams = ObsErrorParams(),
) -> list[tuple[int, float, float]]:
    """Mean number of particles with standard-PF weight above 1/N_e for random platform subsets."""
    err = obs_err.scaled(R_scale)
    rows = []
    for n in subset_sizes:
        if n > len(obs):
            raise ValueError(f"subset size {n} exceeds the {len(obs)} available platforms")
        counts = []
        for _ in range(trials):
            idx = np.sort(rng.choice(len(obs), size=n, replace=False)) if n else np.zeros(0, np.int64)
            w = standard_pf_weights(states, [obs[i] for i in idx], phys, grid, err)
            counts.append(weight_count(w))
        rows.append((int(n), float(R_scale), float(np.mean(counts))))
    return rows


def write_rank_hist(path: str | Path, counts) -> None:
    Path(path).write_text("rank,count\n" + "".join(f"{r},{int(c)}\n" for r, c in enumerate(counts)), encoding="utf-8")


def write_collapse(path: str | Path, rows) -> None:
    Path(path).write_text(
        "n_obs,R_scale,mean_count\n" + "".join(f"{n},{r!r},{c!r}\n" for n, r, c in rows), encoding="utf-8"
    )
