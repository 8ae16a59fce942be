"""Per-particle random streams keyed by (seed, particle index, purpose).

Each stream is an independent PCG64 generator derived from a numpy
SeedSequence, so results never depend on which worker runs a particle.
"""

from __future__ import annotations

import json

import numpy as np

PURPOSES = {
    "model_error": 0,
    "filter": 1,
    "observation": 2,
    "truth": 3,
    "rank": 4,
    "resample": 5,
    "experiment": 6,
}

TRUTH_INDEX = 2**31 - 1
"""Particle slot reserved for the synthetic truth."""


def stream(seed: int, particle: int, purpose: str) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose '{purpose}'")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(particle), PURPOSES[purpose]))
    return np.random.Generator(np.random.PCG64(ss))


def get_state(gen: np.random.Generator) -> str:
    return json.dumps(gen.bit_generator.state, sort_keys=True)


def set_state(gen: np.random.Generator, state: str) -> None:
    gen.bit_generator.state = json.loads(state)


class ParticleStreams:
    """The model-error and filter streams of one particle."""

    def __init__(self, seed: int, particle: int):
        self.seed = int(seed)
        self.particle = int(particle)
        self.model_error = stream(seed, particle, "model_error")
        self.filter = stream(seed, particle, "filter")

    def dump(self) -> dict:
        return {"model_error": get_state(self.model_error), "filter": get_state(self.filter)}

    def load(self, d: dict) -> None:
        set_state(self.model_error, d["model_error"])
        set_state(self.filter, d["filter"])
