"""Synthetic truth, drifters, moorings, observation synthesis and innovations.

Observation files are UTF-8 text with one record per line,

    time,kind,id,x,y,y_hu,y_hv

where floats are written with the shortest repr that round-trips exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model_error as me
from .grid import ModelGrid, OceanState, PhysParams, locate_cell, locate_cells, write_snapshot
from .rng import TRUTH_INDEX, stream
from .swe import DryCellError, JetParams, SchemeParams, init_double_jet, model_step

DRIFTER = "drifter"
MOORING = "mooring"
KIND_ORDER = {DRIFTER: 0, MOORING: 1}


@dataclass
class Drifter:
    id: int
    x: float
    y: float

    def __post_init__(self):
        self.x = float(self.x)
        self.y = float(self.y)
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"drifter {self.id}: non-finite position")


@dataclass(frozen=True)
class Mooring:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class ObservationRecord:
    time: float
    kind: str
    id: int
    x: float
    y: float
    y_hu: float
    y_hv: float

    @property
    def value(self) -> np.ndarray:
        return np.array([self.y_hu, self.y_hv])

    @property
    def key(self) -> tuple[int, int]:
        """Global platform ordering: drifters before moorings, then by id."""
        return (KIND_ORDER[self.kind], self.id)


@dataclass(frozen=True)
class ObsErrorParams:
    r_hu: float = 1.0
    r_hv: float = 1.0

    def __post_init__(self):
        if not (self.r_hu > 0 and self.r_hv > 0):
            raise ValueError("observation error variances must be positive")

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.r_hu, self.r_hv])

    def scaled(self, factor: float) -> "ObsErrorParams":
        return ObsErrorParams(self.r_hu * factor, self.r_hv * factor)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(2) * np.sqrt([self.r_hu, self.r_hv])


def _velocity_at(state: OceanState, j, k, phys: PhysParams):
    h = phys.H_eq + state.eta[k, j].astype(np.float64)
    if np.any(h <= 0):
        raise DryCellError("dry cell at drifter location")
    return state.hu[k, j] / h, state.hv[k, j] / h


def cell_velocity(state: OceanState, x, y, phys: PhysParams, grid: ModelGrid):
    """Piecewise-constant current (u, v) of the cells containing the points (x, y)."""
    j, k = locate_cells(x, y, grid)
    return _velocity_at(state, j, k, phys)


def advect_drifters(state: OceanState, drifters: list[Drifter], dt: float, phys: PhysParams, grid: ModelGrid) -> list[Drifter]:
    """Forward Euler step with the piecewise-constant cell velocity; positions wrapped."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not drifters:
        return []
    x = np.array([d.x for d in drifters])
    y = np.array([d.y for d in drifters])
    j, k = locate_cells(x, y, grid)
    u, v = _velocity_at(state, j, k, phys)
    xn = np.mod(x + dt * u, grid.Lx)
    yn = np.mod(y + dt * v, grid.Ly)
    return [Drifter(d.id, a, b) for d, a, b in zip(drifters, xn, yn)]


def minimal_image(d, L):
    """Periodic displacement folded into [-L/2, L/2)."""
    return np.mod(np.asarray(d, dtype=np.float64) + 0.5 * L, L) - 0.5 * L


def observe_drifter(
    prev: Drifter, cur: Drifter, dt_obs: float, phys: PhysParams, grid: ModelGrid,
    rng: np.random.Generator | None, obs_err: ObsErrorParams = ObsErrorParams(), time: float = 0.0,
) -> ObservationRecord:
    if not dt_obs > 0:
        raise ValueError("dt_obs must be positive")
    dx = float(minimal_image(cur.x - prev.x, grid.Lx))
    dy = float(minimal_image(cur.y - prev.y, grid.Ly))
    y = np.array([dx / dt_obs * phys.H_eq, dy / dt_obs * phys.H_eq])
    if rng is not None:
        y = y + obs_err.sample(rng)
    return ObservationRecord(float(time), DRIFTER, cur.id, cur.x, cur.y, float(y[0]), float(y[1]))


def observe_state(state: OceanState, x: float, y: float, grid: ModelGrid) -> np.ndarray:
    """The observation operator H: (hu, hv) of the containing cell."""
    j, k = locate_cell(x, y, grid)
    return np.array([float(state.hu[k, j]), float(state.hv[k, j])])


def observe_mooring(
    truth: OceanState, mooring: Mooring, phys: PhysParams, grid: ModelGrid,
    rng: np.random.Generator | None, obs_err: ObsErrorParams = ObsErrorParams(), time: float = 0.0,
) -> ObservationRecord:
    j, k = locate_cell(mooring.x, mooring.y, grid)
    scale = phys.H_eq / (phys.H_eq + float(truth.eta[k, j]))
    y = np.array([float(truth.hu[k, j]) * scale, float(truth.hv[k, j]) * scale])
    if rng is not None:
        y = y + obs_err.sample(rng)
    return ObservationRecord(float(time), MOORING, mooring.id, mooring.x, mooring.y, float(y[0]), float(y[1]))


def innovation(particle: OceanState, obs: ObservationRecord, phys: PhysParams, grid: ModelGrid) -> np.ndarray:
    """d = y * (H_eq + eta_i) / H_eq - H(psi_i) at the observation cell."""
    j, k = locate_cell(obs.x, obs.y, grid)
    scale = (phys.H_eq + float(particle.eta[k, j])) / phys.H_eq
    return obs.value * scale - np.array([float(particle.hu[k, j]), float(particle.hv[k, j])])


# ----------------------------------------------------------------------------- files


def format_record(r: ObservationRecord) -> str:
    vals = (float(r.time), r.kind, int(r.id), float(r.x), float(r.y), float(r.y_hu), float(r.y_hv))
    return "{!r},{},{},{!r},{!r},{!r},{!r}".format(*vals)


def parse_record(line: str) -> ObservationRecord:
    parts = line.strip().split(",")
    if len(parts) != 7:
        raise ValueError(f"malformed observation line: {line!r}")
    t, kind, pid, x, y, a, b = parts
    if kind not in KIND_ORDER:
        raise ValueError(f"unknown platform kind '{kind}'")
    rec = ObservationRecord(float(t), kind, int(pid), float(x), float(y), float(a), float(b))
    if not all(math.isfinite(v) for v in (rec.time, rec.x, rec.y, rec.y_hu, rec.y_hv)):
        raise ValueError(f"non-finite value in observation line: {line!r}")
    return rec


def write_observations(path: str | Path, records) -> None:
    last = -math.inf
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            if r.time < last:
                raise ValueError("observation times must be non-decreasing")
            last = r.time
            fh.write(format_record(r) + "\n")


def read_observations(path: str | Path) -> list[ObservationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_record(line))
    for a, b in zip(out, out[1:]):
        if b.time < a.time:
            raise ValueError(f"{path}: observation times decrease")
    return out


def group_by_time(records) -> dict[float, list[ObservationRecord]]:
    groups: dict[float, list[ObservationRecord]] = {}
    for r in records:
        groups.setdefault(r.time, []).append(r)
    for v in groups.values():
        v.sort(key=lambda r: r.key)
    return groups


# ----------------------------------------------------------------------------- layouts


def lattice_positions(n_x: int, n_y: int, grid: ModelGrid) -> list[tuple[float, float]]:
    """Equidistant lattice snapped to cell centers, row by row from the south-west."""
    out = []
    for b in range(n_y):
        for a in range(n_x):
            j = int((a + 0.5) * grid.nx / n_x)
            k = int((b + 0.5) * grid.ny / n_y)
            out.append(grid.cell_center(j, k))
    return out


def drifter_lattice(n_x: int, n_y: int, grid: ModelGrid) -> list[Drifter]:
    return [Drifter(i, x, y) for i, (x, y) in enumerate(lattice_positions(n_x, n_y, grid))]


def mooring_lattice(n_x: int, n_y: int, grid: ModelGrid) -> list[Mooring]:
    return [Mooring(i, x, y) for i, (x, y) in enumerate(lattice_positions(n_x, n_y, grid))]


# ----------------------------------------------------------------------------- truth


@dataclass
class TruthConfig:
    grid: ModelGrid
    phys: PhysParams = field(default_factory=PhysParams)
    scheme: SchemeParams = field(default_factory=SchemeParams)
    error: me.ErrorParams | None = None
    obs_error: ObsErrorParams = field(default_factory=ObsErrorParams)
    jet: JetParams = field(default_factory=JetParams)
    duration: float = 86400.0
    insertion_time: float = 0.0
    obs_cadence: float = 300.0
    snapshot_interval: float = 86400.0
    drifters: tuple[int, int] = (8, 8)
    moorings: tuple[int, int] = (20, 12)
    seed: int = 0

    def __post_init__(self):
        if self.error is None:
            self.error = me.ErrorParams.default(self.grid)
        dt = self.scheme.model_dt
        for name in ("duration", "insertion_time", "obs_cadence", "snapshot_interval"):
            v = getattr(self, name)
            if v < 0 or abs(v / dt - round(v / dt)) > 1e-9:
                raise ValueError(f"{name}={v} must be a non-negative multiple of the model step {dt}")
        if self.obs_cadence <= 0 or self.snapshot_interval <= 0:
            raise ValueError("cadences must be positive")


@dataclass
class TruthRun:
    records: list[ObservationRecord]
    snapshots: list[OceanState]
    final: OceanState
    drifters: list[Drifter]


def _steps(seconds: float, dt: float) -> int:
    return int(round(seconds / dt))


def generate_truth(cfg: TruthConfig, initial: OceanState | None = None, out_dir: str | Path | None = None) -> TruthRun:
    """Run the stochastic truth, seed platforms at the insertion time and observe them."""
    grid, phys, dt = cfg.grid, cfg.phys, cfg.scheme.model_dt
    state = initial.copy() if initial is not None else init_double_jet(grid, phys, cfg.jet)
    err_rng = stream(cfg.seed, TRUTH_INDEX, "truth")
    obs_rng = stream(cfg.seed, TRUTH_INDEX, "observation")
    n_total = _steps(cfg.duration, dt)
    n_ins = _steps(cfg.insertion_time, dt)
    n_obs = _steps(cfg.obs_cadence, dt)
    n_snap = _steps(cfg.snapshot_interval, dt)
    t0 = state.t
    snapshots = [state.copy()]
    records: list[ObservationRecord] = []
    drifters: list[Drifter] = []
    moorings: list[Mooring] = []
    prev: list[Drifter] = []
    for n in range(1, n_total + 1):
        if n - 1 == n_ins:
            drifters = drifter_lattice(*cfg.drifters, grid) if cfg.drifters[0] * cfg.drifters[1] else []
            moorings = mooring_lattice(*cfg.moorings, grid) if cfg.moorings[0] * cfg.moorings[1] else []
            prev = list(drifters)
        if drifters:
            drifters = advect_drifters(state, drifters, dt, phys, grid)
        state = model_step(state, phys, cfg.scheme, grid)
        state = me.perturb_state(state, err_rng, cfg.error, phys)
        t = t0 + n * dt
        state.t = t
        if n > n_ins and (n - n_ins) % n_obs == 0:
            for p, c in zip(prev, drifters):
                records.append(observe_drifter(p, c, cfg.obs_cadence, phys, grid, obs_rng, cfg.obs_error, t))
            for m in moorings:
                records.append(observe_mooring(state, m, phys, grid, obs_rng, cfg.obs_error, t))
            prev = list(drifters)
        if n % n_snap == 0:
            snapshots.append(state.copy())
    run = TruthRun(records, snapshots, state, drifters)
    if out_dir is not None:
        save_truth(run, out_dir)
    return run


def save_truth(run: TruthRun, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    write_observations(out / "observations.csv", run.records)
    for s in run.snapshots:
        write_snapshot(out / "truth" / f"truth_{int(round(s.t)):09d}.dcst", s)
