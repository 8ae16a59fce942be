import pytest

from driftpf.config import DEFAULTS, build_setup, dump_config, load_config


def test_defaults():
    s = build_setup()
    assert (s.grid.nx, s.grid.ny) == (500, 300)
    assert s.phys.f == pytest.approx(1.405e-4)
    assert s.error.coarse.c_omega == 5
    assert s.seed == 0 and s.obs_cadence == 300.0
    assert s.experiment["ensemble_size"] == 100


def test_override_and_unknown_key():
    s = build_setup({"grid": {"nx": 100, "ny": 60}, "seed": 7})
    assert (s.grid.nx, s.grid.ny, s.grid.dx) == (100, 60, 2220.0)
    assert s.seed == 7
    with pytest.raises(KeyError):
        build_setup({"grid": {"nz": 3}})
    with pytest.raises(KeyError):
        build_setup({"colour": "blue"})
    with pytest.raises(TypeError):
        build_setup({"grid": 5})
    assert DEFAULTS["grid"]["nx"] == 500


def test_load_dump_round_trip(tmp_path):
    s = build_setup({"model_error": {"q0": 1e-4}, "experiment": {"observe": "all_moorings"}})
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(s))
    back = load_config(p)
    assert back.raw == s.raw
    assert load_config(None).raw == build_setup().raw


def test_load_rejects_non_mapping(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(TypeError):
        load_config(p)


def test_truth_config_from_setup():
    s = build_setup({"truth": {"duration": 7200.0, "insertion_time": 1800.0}})
    tc = s.truth_config(seed=3)
    assert tc.duration == 7200.0 and tc.insertion_time == 1800.0 and tc.seed == 3
    assert tc.drifters == (8, 8) and tc.moorings == (20, 12)
