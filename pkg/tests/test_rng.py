import numpy as np
import pytest

from driftpf.rng import PURPOSES, ParticleStreams, get_state, set_state, stream


def test_streams_are_reproducible_and_distinct():
    a = stream(1, 0, "model_error").standard_normal(8)
    assert np.array_equal(a, stream(1, 0, "model_error").standard_normal(8))
    others = [stream(2, 0, "model_error"), stream(1, 1, "model_error"), stream(1, 0, "filter")]
    for g in others:
        assert not np.array_equal(a, g.standard_normal(8))


def test_unknown_purpose():
    with pytest.raises(KeyError):
        stream(1, 0, "nope")
    assert len(set(PURPOSES.values())) == len(PURPOSES)


def test_state_round_trip():
    g = stream(3, 4, "filter")
    g.standard_normal(17)
    s = get_state(g)
    x = g.standard_normal(5)
    h = stream(0, 0, "filter")
    set_state(h, s)
    assert np.array_equal(h.standard_normal(5), x)


def test_particle_streams_dump_load():
    p = ParticleStreams(9, 3)
    p.model_error.random(11)
    p.filter.random(2)
    d = p.dump()
    q = ParticleStreams(9, 3)
    q.load(d)
    assert np.array_equal(p.model_error.random(4), q.model_error.random(4))
    assert np.array_equal(p.filter.random(4), q.filter.random(4))
