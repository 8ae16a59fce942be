"""Ensemble orchestration: spin-up, data assimilation and drift forecasts.

Particles are the unit of parallelism.  Every particle owns its state and
its random streams, so a thread pool of any size produces identical results;
the only cross-particle step is the IEWPF barrier, reduced in particle order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model_error as me
from .config import Setup
from .grid import OceanState, read_snapshot, write_snapshot
from .iewpf import FilterOperators, iewpf_assimilate
from .observations import DRIFTER, MOORING, Drifter, ObservationRecord, cell_velocity, group_by_time
from .rng import ParticleStreams
from .swe import init_double_jet, model_step

SELECTORS = ("all_drifters", "all_moorings", "west_moorings", "south_moorings", "none")


class MissingObservationError(LookupError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    spinup_end: float
    da_end: float
    forecast_end: float
    obs_cadence: float = 300.0
    observe: str = "all_drifters"
    n_e: int = 100
    seed: int = 0
    forecast_output: float = 3600.0
    filter_mode: str = "two-stage"
    model_dt: float = 60.0

    def __post_init__(self):
        if not (0 <= self.spinup_end < self.da_end < self.forecast_end):
            raise ValueError("phase boundaries must be strictly increasing")
        if self.n_e < 2:
            raise ValueError("the ensemble needs at least two particles")
        for name in ("obs_cadence", "forecast_output", "spinup_end", "da_end", "forecast_end"):
            v = getattr(self, name)
            if abs(v / self.model_dt - round(v / self.model_dt)) > 1e-9:
                raise ValueError(f"{name}={v} is not a multiple of the model step")
        parse_selector(self.observe)

    @classmethod
    def from_setup(cls, setup: Setup, **over) -> "ExperimentPlan":
        e = setup.experiment
        kw = dict(
            spinup_end=float(e["spinup_end"]), da_end=float(e["da_end"]), forecast_end=float(e["forecast_end"]),
            obs_cadence=setup.obs_cadence, observe=str(e["observe"]), n_e=int(e["ensemble_size"]),
            seed=setup.seed, forecast_output=float(e["forecast_output"]), filter_mode=str(e["filter_mode"]),
            model_dt=setup.scheme.model_dt,
        )
        kw.update(over)
        return cls(**kw)

    def echo(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.__dict__.items())


def parse_selector(selector: str):
    """Predicate (record, Lx, Ly) -> bool for an observation subset.

    Accepted: all_drifters, all_moorings, west_moorings, south_moorings, none,
    and drifters:<id>,<id>,... for an explicit drifter subset.
    """
    if selector.startswith("drifters:"):
        ids = {int(s) for s in selector.split(":", 1)[1].split(",") if s.strip()}
        return lambda r, Lx, Ly: r.kind == DRIFTER and r.id in ids
    if selector == "all_drifters":
        return lambda r, Lx, Ly: r.kind == DRIFTER
    if selector == "all_moorings":
        return lambda r, Lx, Ly: r.kind == MOORING
    if selector == "west_moorings":
        return lambda r, Lx, Ly: r.kind == MOORING and r.x < 0.5 * Lx
    if selector == "south_moorings":
        return lambda r, Lx, Ly: r.kind == MOORING and r.y < 0.5 * Ly
    if selector == "none":
        return lambda r, Lx, Ly: False
    raise ValueError(f"unknown observation selector '{selector}'")


def select(records, selector: str, setup: Setup) -> list[ObservationRecord]:
    pred = parse_selector(selector)
    Lx, Ly = setup.grid.Lx, setup.grid.Ly
    return [r for r in records if pred(r, Lx, Ly)]


@dataclass
class EnsembleState:
    states: list[OceanState]
    streams: list[ParticleStreams]
    cycle: int = 0

    @property
    def t(self) -> float:
        ts = {s.t for s in self.states}
        if len(ts) != 1:
            raise RuntimeError(f"particles out of sync: times {sorted(ts)}")
        return ts.pop()

    @property
    def n_e(self) -> int:
        return len(self.states)


@contextmanager
def worker_pool(workers: int):
    if workers <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            yield ex


def _map(fn, n, pool):
    return list(pool.map(fn, range(n))) if pool is not None else [fn(i) for i in range(n)]


def _steps(seconds: float, dt: float) -> int:
    return int(round(seconds / dt))


def advance_particle(
    state: OceanState, rng: np.random.Generator, n_steps: int, setup: Setup, deterministic_last: bool = False
) -> OceanState:
    """n model steps with a model-error draw after each step (optionally not after the last)."""
    t0 = state.t
    dt = setup.scheme.model_dt
    for s in range(n_steps):
        state = model_step(state, setup.phys, setup.scheme, setup.grid)
        if not (deterministic_last and s == n_steps - 1):
            state = me.perturb_state(state, rng, setup.error, setup.phys)
        state.t = t0 + (s + 1) * dt
    return state


def run_spinup(plan: ExperimentPlan, setup: Setup, workers: int = 1, initial: list[OceanState] | None = None) -> EnsembleState:
    """Start every particle from the double jet (or `initial`) and run the stochastic model to spinup_end."""
    streams = [ParticleStreams(plan.seed, i) for i in range(plan.n_e)]
    base = init_double_jet(setup.grid, setup.phys, setup.jet)
    starts = initial if initial is not None else [base] * plan.n_e
    if len(starts) != plan.n_e:
        raise ValueError("one initial state per particle is required")

    def one(i):
        n = _steps(plan.spinup_end - starts[i].t, setup.scheme.model_dt)
        return advance_particle(starts[i].copy(), streams[i].model_error, n, setup)

    with worker_pool(workers) as pool:
        states = _map(one, plan.n_e, pool)
    return EnsembleState(states, streams)


def run_assimilation(
    ens: EnsembleState, records, plan: ExperimentPlan, setup: Setup, ops: FilterOperators | None = None,
    workers: int = 1, diagnostics: list[str] | None = None, stop_at: float | None = None,
) -> EnsembleState:
    """Observation cycles from the current time to da_end (or stop_at).

    Between observations the model runs with model error after every step,
    except the step that enters an observation time, which is deterministic.
    """
    t_end = plan.da_end if stop_at is None else min(stop_at, plan.da_end)
    groups = group_by_time(select(records, plan.observe, setup))
    use_filter = plan.observe != "none"
    if use_filter and ops is None:
        ops = FilterOperators.build(setup.grid, setup.phys, setup.error, setup.obs_error)
    n_cyc = _steps(plan.obs_cadence, setup.scheme.model_dt)
    with worker_pool(workers) as pool:
        t = ens.t
        while t + plan.obs_cadence <= t_end + 1e-6:
            t_obs = t + plan.obs_cadence
            obs = groups.get(t_obs, [])
            if use_filter and not obs:
                raise MissingObservationError(f"no '{plan.observe}' observations at t={t_obs}")
            states, streams = ens.states, ens.streams

            def fwd(i):
                return advance_particle(states[i], streams[i].model_error, n_cyc, setup, deterministic_last=use_filter)

            ens.states = _map(fwd, ens.n_e, pool)
            if use_filter:
                res = iewpf_assimilate(
                    ens.states, obs, ops, [s.filter for s in streams], plan.filter_mode, pool, ens.cycle
                )
                ens.states = res.states
                if diagnostics is not None:
                    diagnostics.extend(res.log)
            ens.cycle += 1
            t = ens.t
    return ens


@dataclass
class Trajectories:
    """Per (time, particle, drifter) wrapped positions plus winding counts."""

    times: np.ndarray  # (n_t,)
    x: np.ndarray  # (n_t, n_e, n_d) wrapped
    y: np.ndarray
    wind_x: np.ndarray  # (n_t, n_e, n_d) integer
    wind_y: np.ndarray
    drifter_ids: list[int] = field(default_factory=list)

    def unwrapped(self, Lx: float, Ly: float) -> tuple[np.ndarray, np.ndarray]:
        return self.x + self.wind_x * Lx, self.y + self.wind_y * Ly

    def lines(self) -> list[str]:
        out = []
        n_t, n_e, n_d = self.x.shape
        for a in range(n_t):
            for i in range(n_e):
                for d in range(n_d):
                    out.append(
                        f"{float(self.times[a])!r},{i},{self.drifter_ids[d]},{float(self.x[a, i, d])!r},"
                        f"{float(self.y[a, i, d])!r},{int(self.wind_x[a, i, d])},{int(self.wind_y[a, i, d])}"
                    )
        return out

    def write(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.lines()), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "Trajectories":
        rows = [line.split(",") for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
        if not rows:
            raise ValueError(f"{path}: empty trajectory file")
        times = sorted({float(r[0]) for r in rows})
        parts = sorted({int(r[1]) for r in rows})
        ids = sorted({int(r[2]) for r in rows})
        ti = {t: a for a, t in enumerate(times)}
        di = {d: a for a, d in enumerate(ids)}
        shape = (len(times), len(parts), len(ids))
        if len(rows) != shape[0] * shape[1] * shape[2] or parts != list(range(len(parts))):
            raise ValueError(f"{path}: incomplete trajectory table")
        x, y = np.empty(shape), np.empty(shape)
        wx, wy = np.empty(shape, np.int64), np.empty(shape, np.int64)
        for r in rows:
            a, i, d = ti[float(r[0])], int(r[1]), di[int(r[2])]
            x[a, i, d], y[a, i, d] = float(r[3]), float(r[4])
            wx[a, i, d], wy[a, i, d] = int(r[5]), int(r[6])
        return cls(np.array(times), x, y, wx, wy, ids)


def run_forecast(
    ens: EnsembleState, drifters: list[Drifter], plan: ExperimentPlan, setup: Setup, workers: int = 1,
) -> tuple[EnsembleState, Trajectories]:
    """Stochastic forecast to forecast_end; every particle advects its own drifter copies."""
    dt = setup.scheme.model_dt
    t0 = ens.t
    n_steps = _steps(plan.forecast_end - t0, dt)
    n_out = _steps(plan.forecast_output, dt)
    out_steps = list(range(0, n_steps + 1, n_out))
    x0 = np.array([d.x for d in drifters], dtype=np.float64)
    y0 = np.array([d.y for d in drifters], dtype=np.float64)
    Lx, Ly = setup.grid.Lx, setup.grid.Ly

    def one(i):
        state = ens.states[i]
        rng = ens.streams[i].model_error
        X, Y = x0.copy(), y0.copy()
        rec = []
        for s in range(n_steps + 1):
            if s % n_out == 0:
                rec.append((X.copy(), Y.copy()))
            if s == n_steps:
                break
            if X.size:
                u, v = cell_velocity(state, np.mod(X, Lx), np.mod(Y, Ly), setup.phys, setup.grid)
                X = X + dt * u
                Y = Y + dt * v
            state = model_step(state, setup.phys, setup.scheme, setup.grid)
            state = me.perturb_state(state, rng, setup.error, setup.phys)
            state.t = t0 + (s + 1) * dt
        return state, rec

    with worker_pool(workers) as pool:
        res = _map(one, ens.n_e, pool)
    ens.states = [r[0] for r in res]
    UX = np.array([[p[0] for p in r[1]] for r in res]).transpose(1, 0, 2)  # (n_t, n_e, n_d)
    UY = np.array([[p[1] for p in r[1]] for r in res]).transpose(1, 0, 2)
    wx = np.floor(UX / Lx).astype(np.int64)
    wy = np.floor(UY / Ly).astype(np.int64)
    times = t0 + dt * np.array(out_steps, dtype=np.float64)
    traj = Trajectories(times, UX - wx * Lx, UY - wy * Ly, wx, wy, [d.id for d in drifters])
    return ens, traj


def drifters_at(records, t: float, ids=None) -> list[Drifter]:
    """Truth drifter positions recorded at time t."""
    out = [Drifter(r.id, r.x, r.y) for r in records if r.kind == DRIFTER and r.time == t and (ids is None or r.id in ids)]
    out.sort(key=lambda d: d.id)
    return out


# ----------------------------------------------------------------------------- checkpoints


def save_checkpoint(ens: EnsembleState, out_dir: str | Path, plan: ExperimentPlan | None = None) -> Path:
    d = Path(out_dir) / "ensemble"
    d.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(ens.states):
        write_snapshot(d / f"particle_{i}.dcst", s)
    with open(d / "rng_state.txt", "w", encoding="utf-8") as fh:
        for i, st in enumerate(ens.streams):
            dump = st.dump()
            for purpose in ("model_error", "filter"):
                fh.write(f"{i}\t{purpose}\t{dump[purpose]}\n")
    meta = f"n_e={ens.n_e}\nt={ens.t!r}\ncycle={ens.cycle}\nseed={ens.streams[0].seed}\n"
    if plan is not None:
        meta += plan.echo()
    (d / "meta.txt").write_text(meta, encoding="utf-8")
    return d


def load_checkpoint(out_dir: str | Path) -> EnsembleState:
    d = Path(out_dir) / "ensemble"
    if not d.is_dir():
        d = Path(out_dir)
    meta = dict(line.split("=", 1) for line in (d / "meta.txt").read_text(encoding="utf-8").splitlines() if "=" in line)
    n_e, seed = int(meta["n_e"]), int(meta["seed"])
    states = [read_snapshot(d / f"particle_{i}.dcst") for i in range(n_e)]
    streams = [ParticleStreams(seed, i) for i in range(n_e)]
    saved: dict[int, dict] = {}
    for line in (d / "rng_state.txt").read_text(encoding="utf-8").splitlines():
        i, purpose, js = line.split("\t", 2)
        saved.setdefault(int(i), {})[purpose] = js
    for i, st in enumerate(streams):
        st.load(saved[i])
    return EnsembleState(states, streams, int(meta.get("cycle", 0)))


def ensemble_mean_positions(traj: Trajectories, Lx: float, Ly: float) -> tuple[np.ndarray, np.ndarray]:
    ux, uy = traj.unwrapped(Lx, Ly)
    return ux.mean(axis=1), uy.mean(axis=1)


def particle_spread(states: list[OceanState]) -> float:
    """Largest pairwise max-norm difference of eta across particles."""
    best = 0.0
    for a in range(len(states)):
        for b in range(a + 1, len(states)):
            best = max(best, float(np.max(np.abs(states[a].eta - states[b].eta))))
    return best if math.isfinite(best) else float("inf")
