"""Run configuration: nested YAML with every physical and numerical default.

Example (the defaults)::

    grid: {nx: 500, ny: 300, dx: 2220.0, dy: 2220.0}
    physics: {g: 9.806, f: 1.405e-4, H_eq: 230.0}
    scheme: {courant: 0.8, limiter_theta: 1.3, model_dt: 60.0}
    model_error: {q0: 2.5e-4, c_omega: 5, L0: null}      # null -> 0.75 coarse dx
    observations: {r_hu: 1.0, r_hv: 1.0, cadence: 300.0, drifters: [8, 8], moorings: [20, 12]}
    jet: {peak_velocity: 0.5, width_fraction: 0.1666667, centers: [0.25, 0.75]}
    truth: {duration: 1123200.0, insertion_time: 259200.0, snapshot_interval: 86400.0}
    experiment: {ensemble_size: 100, spinup_end: 259200.0, da_end: 864000.0,
                 forecast_end: 1123200.0, forecast_output: 3600.0,
                 observe: all_drifters, filter_mode: two-stage, workers: 1}
    seed: 0
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .grid import ModelGrid, PhysParams
from .model_error import ErrorParams
from .observations import ObsErrorParams, TruthConfig
from .swe import JetParams, SchemeParams

DAY = 86400.0

DEFAULTS: dict = {
    "grid": {"nx": 500, "ny": 300, "dx": 2220.0, "dy": 2220.0},
    "physics": {"g": 9.806, "f": 1.405e-4, "H_eq": 230.0},
    "scheme": {"courant": 0.8, "limiter_theta": 1.3, "model_dt": 60.0},
    "model_error": {"q0": 2.5e-4, "c_omega": 5, "L0": None},
    "observations": {"r_hu": 1.0, "r_hv": 1.0, "cadence": 300.0, "drifters": [8, 8], "moorings": [20, 12]},
    "jet": {"peak_velocity": 0.5, "width_fraction": 1.0 / 6.0, "centers": [0.25, 0.75]},
    "truth": {"duration": 13 * DAY, "insertion_time": 3 * DAY, "snapshot_interval": DAY},
    "experiment": {
        "ensemble_size": 100,
        "spinup_end": 3 * DAY,
        "da_end": 10 * DAY,
        "forecast_end": 13 * DAY,
        "forecast_output": 3600.0,
        "observe": "all_drifters",
        "filter_mode": "two-stage",
        "workers": 1,
    },
    "seed": 0,
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise KeyError(f"unknown configuration key '{path}{k}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise TypeError(f"configuration key '{path}{k}' must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class Setup:
    grid: ModelGrid
    phys: PhysParams
    scheme: SchemeParams
    error: ErrorParams
    obs_error: ObsErrorParams
    jet: JetParams
    raw: dict

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def experiment(self) -> dict:
        return self.raw["experiment"]

    @property
    def obs_cadence(self) -> float:
        return float(self.raw["observations"]["cadence"])

    def truth_config(self, seed: int | None = None) -> TruthConfig:
        t, o = self.raw["truth"], self.raw["observations"]
        return TruthConfig(
            grid=self.grid, phys=self.phys, scheme=self.scheme, error=self.error, obs_error=self.obs_error,
            jet=self.jet, duration=float(t["duration"]), insertion_time=float(t["insertion_time"]),
            obs_cadence=float(o["cadence"]), snapshot_interval=float(t["snapshot_interval"]),
            drifters=tuple(o["drifters"]), moorings=tuple(o["moorings"]),
            seed=self.seed if seed is None else int(seed),
        )


def build_setup(overrides: dict | None = None) -> Setup:
    raw = _merge(DEFAULTS, overrides or {})
    g = raw["grid"]
    grid = ModelGrid(int(g["nx"]), int(g["ny"]), float(g["dx"]), float(g["dy"]))
    phys = PhysParams(**{k: float(v) for k, v in raw["physics"].items()})
    scheme = SchemeParams(**{k: float(v) for k, v in raw["scheme"].items()})
    m = raw["model_error"]
    error = ErrorParams.default(
        grid, q0=float(m["q0"]), c_omega=int(m["c_omega"]), L0=None if m["L0"] is None else float(m["L0"])
    )
    o = raw["observations"]
    obs_error = ObsErrorParams(float(o["r_hu"]), float(o["r_hv"]))
    j = raw["jet"]
    jet = JetParams(float(j["peak_velocity"]), float(j["width_fraction"]), tuple(float(c) for c in j["centers"]))
    return Setup(grid, phys, scheme, error, obs_error, jet, raw)


def load_config(path: str | Path | None) -> Setup:
    if path is None:
        return build_setup()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise TypeError(f"{path}: top level must be a mapping")
    return build_setup(data)


def dump_config(setup: Setup) -> str:
    return yaml.safe_dump(setup.raw, sort_keys=False)
