"""Desk-scale experiment drivers shared by the command line and the acceptance suite."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as dg
from .config import Setup
from .ensemble import EnsembleState, ExperimentPlan, drifters_at, run_assimilation, run_forecast, run_spinup
from .grid import OceanState
from .iewpf import FilterOperators
from .observations import MOORING, generate_truth
from .rng import ParticleStreams, stream


def derived_seed(*keys: int) -> int:
    """Independent 63-bit seed derived from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def spinup_pool(setup: Setup, size: int, duration: float, seed: int, workers: int = 1) -> list[OceanState]:
    """Independent stochastic spin-ups of the double jet, all ending at t = duration."""
    plan = ExperimentPlan(
        spinup_end=duration, da_end=duration + setup.obs_cadence, forecast_end=duration + 2 * setup.obs_cadence,
        obs_cadence=setup.obs_cadence, observe="none", n_e=size, seed=seed, model_dt=setup.scheme.model_dt,
        forecast_output=setup.obs_cadence,
    )
    return run_spinup(plan, setup, workers).states


# ----------------------------------------------------------------------------- rank histograms


@dataclass
class RankConfig:
    n_e: int = 20
    n_experiments: int = 200
    n_cycles: int = 6
    forecast: float = 3600.0
    moorings: tuple[int, int] = (6, 4)
    cells: list[tuple[int, int]] = field(default_factory=lambda: [(20, k) for k in range(0, 60, 10)])
    pool_size: int = 60
    spinup: float = 86400.0


@dataclass
class RankResult:
    counts: np.ndarray  # accumulated over cells and both transports
    per_cell: dict  # (cell, var) -> counts
    n_e: int


def rank_experiment(setup: Setup, cfg: RankConfig, seed: int, workers: int = 1, pool: list[OceanState] | None = None,
                    progress=None) -> RankResult:
    """Independent DA experiments from a spun-up pool; truth and members are drawn from the same pool."""
    if pool is None:
        pool = spinup_pool(setup, cfg.pool_size, cfg.spinup, derived_seed(seed, 0), workers)
    if len(pool) < cfg.n_e + 1:
        raise ValueError("the spin-up pool must hold at least N_e + 1 states")
    ops = FilterOperators.build(setup.grid, setup.phys, setup.error, setup.obs_error)
    cad = setup.obs_cadence
    R = setup.obs_error.r_hu, setup.obs_error.r_hv
    per_cell = {(c, v): np.zeros(cfg.n_e + 1, np.int64) for c in cfg.cells for v in ("hu", "hv")}
    for e in range(cfg.n_experiments):
        pick_rng = stream(seed, e, "experiment")
        members = pick_rng.choice(len(pool), cfg.n_e + 1, replace=False)
        truth0 = pool[members[0]]
        t0 = truth0.t
        tcfg = replace(
            setup.truth_config(seed=derived_seed(seed, e, 1)),
            duration=cfg.n_cycles * cad + cfg.forecast, insertion_time=0.0, drifters=(0, 0), moorings=cfg.moorings,
            snapshot_interval=cfg.n_cycles * cad + cfg.forecast,
        )
        truth = generate_truth(tcfg, initial=truth0)
        plan = ExperimentPlan(
            spinup_end=t0, da_end=t0 + cfg.n_cycles * cad, forecast_end=t0 + cfg.n_cycles * cad + cfg.forecast,
            obs_cadence=cad, observe="all_moorings", n_e=cfg.n_e, seed=derived_seed(seed, e, 2),
            model_dt=setup.scheme.model_dt, forecast_output=cfg.forecast,
        )
        ens = EnsembleState([pool[m].copy() for m in members[1:]], [ParticleStreams(plan.seed, i) for i in range(cfg.n_e)])
        ens = run_assimilation(ens, truth.records, plan, setup, ops, workers)
        ens, _ = run_forecast(ens, [], plan, setup, workers)
        rank_rng = stream(seed, e, "rank")
        for c in cfg.cells:
            j, k = c
            for v, r in zip(("hu", "hv"), R):
                tv = float(getattr(truth.final, v)[k, j])
                observed = tv + rank_rng.standard_normal() * np.sqrt(r)
                vals = [float(getattr(s, v)[k, j]) for s in ens.states]
                per_cell[(c, v)][dg.compute_rank(observed, vals, r, rank_rng)] += 1
        if progress is not None:
            progress(e)
    total = sum(per_cell.values())
    return RankResult(total, per_cell, cfg.n_e)


# ----------------------------------------------------------------------------- twin forecast experiment


@dataclass
class TwinConfig:
    n_e: int = 50
    spinup: float = 43200.0
    da: float = 86400.0
    forecast: float = 43200.0
    drifters: tuple[int, int] = (4, 4)
    # four columns 25 cells apart; two of the six rows sit on the jet axes
    moorings: tuple[int, int] = (4, 6)
    experiments: tuple[str, ...] = ("all_moorings", "all_drifters", "none")
    output: float = 3600.0


def twin_forecast_experiment(setup: Setup, cfg: TwinConfig, seed: int, workers: int = 1) -> dict[str, dg.ErrorSeries]:
    """One truth, one shared spin-up, then DA + drift forecast for each observation subset."""
    total = cfg.spinup + cfg.da + cfg.forecast
    tcfg = replace(
        setup.truth_config(seed=derived_seed(seed, 1)), duration=total, insertion_time=cfg.spinup,
        drifters=cfg.drifters, moorings=cfg.moorings, snapshot_interval=total,
    )
    truth = generate_truth(tcfg)
    base_plan = ExperimentPlan(
        spinup_end=cfg.spinup, da_end=cfg.spinup + cfg.da, forecast_end=total, obs_cadence=setup.obs_cadence,
        observe="none", n_e=cfg.n_e, seed=derived_seed(seed, 2), model_dt=setup.scheme.model_dt,
        forecast_output=cfg.output,
    )
    spun = run_spinup(base_plan, setup, workers)
    ops = FilterOperators.build(setup.grid, setup.phys, setup.error, setup.obs_error)
    start = drifters_at(truth.records, base_plan.da_end)
    out = {}
    for name in cfg.experiments:
        plan = replace(base_plan, observe=name)
        ens = copy.deepcopy(spun)
        ens = run_assimilation(ens, truth.records, plan, setup, ops, workers)
        ens, traj = run_forecast(ens, start, plan, setup, workers)
        tx, ty = dg.truth_positions(truth.records, traj.times, traj.drifter_ids)
        out[name] = dg.forecast_error(traj, tx, ty, setup.grid.Lx, setup.grid.Ly)
    return out


# ----------------------------------------------------------------------------- collapse


def mooring_records_at(records, t: float):
    return sorted((r for r in records if r.kind == MOORING and r.time == t), key=lambda r: r.id)


@dataclass
class CollapseConfig:
    n_e: int = 100
    spinup: float = 43200.0
    da: float = 21600.0
    drifters: tuple[int, int] = (4, 4)
    observe: str = "all_drifters"
    sizes: tuple[int, ...] = (1, 2, 4, 8)
    trials: int = 50
    r_scales: tuple[float, ...] = (1.0, 10.0)


def collapse_demo(setup: Setup, cfg: CollapseConfig, seed: int, workers: int = 1) -> dict[float, list]:
    """Standard-PF weight counts for the forecast of a post-IEWPF ensemble at the next observation time.

    Returns rows (n_obs, R_scale, mean_count) per R scale.
    """
    end = cfg.spinup + cfg.da
    t_next = end + setup.obs_cadence
    tcfg = replace(
        setup.truth_config(seed=derived_seed(seed, 1)), duration=t_next, insertion_time=cfg.spinup,
        drifters=cfg.drifters, moorings=(0, 0), snapshot_interval=t_next,
    )
    truth = generate_truth(tcfg)
    plan = ExperimentPlan(
        spinup_end=cfg.spinup, da_end=end, forecast_end=t_next, obs_cadence=setup.obs_cadence,
        observe=cfg.observe, n_e=cfg.n_e, seed=derived_seed(seed, 2), model_dt=setup.scheme.model_dt,
        forecast_output=setup.obs_cadence,
    )
    ens = run_spinup(plan, setup, workers)
    ens = run_assimilation(ens, truth.records, plan, setup, None, workers)
    ens, _ = run_forecast(ens, [], plan, setup, workers)
    obs = sorted((r for r in truth.records if r.time == t_next and r.kind != MOORING), key=lambda r: r.id)
    out = {}
    for r_scale in cfg.r_scales:
        rng = stream(seed, 0, "resample")
        out[r_scale] = dg.collapse_experiment(ens.states, obs, cfg.sizes, cfg.trials, r_scale, rng, setup.phys,
                                              setup.grid, setup.obs_error)
    return out
