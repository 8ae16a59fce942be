import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftpf import diagnostics as dg
from driftpf.ensemble import Trajectories
from driftpf.grid import ModelGrid, OceanState, PhysParams
from driftpf.observations import MOORING, ObservationRecord

LX, LY = 1.0e6, 6.0e5


def _traj(x, y, times=None):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    times = np.arange(x.shape[0], dtype=np.float64) * 3600.0 if times is None else np.asarray(times)
    z = np.zeros(x.shape, dtype=np.int64)
    return Trajectories(times, x, y, z, z.copy(), list(range(x.shape[2])))


def test_rank_extremes():
    rng = np.random.default_rng(0)
    assert dg.compute_rank(-1e9, np.zeros(10), 1.0, rng) == 0
    assert dg.compute_rank(1e9, np.zeros(10), 1.0, rng) == 10


def test_rank_ties_split_by_coin():
    rng = np.random.default_rng(1)
    ranks = [dg.compute_rank(0.0, np.zeros(4), 0.0, rng) for _ in range(4000)]
    counts = dg.rank_histogram(ranks, 4)
    # binomial(4, 1/2) distribution of tied members counted below
    np.testing.assert_allclose(counts / 4000, [1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16], atol=0.03)


def test_rank_uniform_for_exchangeable_truth():
    rng = np.random.default_rng(2)
    n_e = 10
    ranks = []
    for _ in range(100_000 // 100):
        draws = rng.standard_normal((100, n_e + 1))
        for row in draws:
            ranks.append(dg.compute_rank(row[0], row[1:], 0.0, rng))
    counts = dg.rank_histogram(ranks, n_e)
    assert counts.sum() == 100_000
    assert dg.uniformity_pvalue(counts) > 0.001


def test_rank_histogram_bounds():
    with pytest.raises(ValueError):
        dg.rank_histogram([0, 5], 4)
    assert dg.rank_histogram([0, 0, 2], 2).tolist() == [2, 0, 1]


def test_uniformity_pvalue_rejects_skew():
    assert dg.uniformity_pvalue([100] * 10) == pytest.approx(1.0)
    assert dg.uniformity_pvalue([1000] + [10] * 9) < 1e-6


@pytest.mark.parametrize("a", [1.0, 250.0, 3000.0])
def test_forecast_error_symmetric_pair(a):
    x = np.array([[[100.0 + a], [100.0 - a]]])
    y = np.full_like(x, 500.0)
    es = dg.forecast_error(_traj(x, y), [[100.0]], [[500.0]], LX, LY)
    assert es.E[0] == pytest.approx(a)
    assert es.RMSE[0] == pytest.approx(a)


def test_forecast_error_across_periodic_seam():
    x = np.array([[[LX - 10.0], [20.0]]])
    y = np.zeros_like(x)
    es = dg.forecast_error(_traj(x, y), [[5.0]], [[0.0]], LX, LY)
    assert es.E[0] == pytest.approx(np.sqrt((15.0**2 + 15.0**2) / 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2e5, 2e5), st.floats(-1e5, 1e5))
def test_forecast_error_translation_invariant(seed, sx, sy):
    rng = np.random.default_rng(seed)
    x = rng.uniform(2e5, 4e5, (3, 5, 2))
    y = rng.uniform(2e5, 4e5, (3, 5, 2))
    tx, ty = rng.uniform(2e5, 4e5, (2, 3, 2))
    a = dg.forecast_error(_traj(x, y), tx, ty, LX, LY)
    b = dg.forecast_error(_traj(np.mod(x + sx, LX), np.mod(y + sy, LY)), np.mod(tx + sx, LX), np.mod(ty + sy, LY),
                          LX, LY)
    np.testing.assert_allclose(a.E, b.E, rtol=1e-9, atol=1e-6)
    np.testing.assert_allclose(a.RMSE, b.RMSE, rtol=1e-9, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_error_bounded_by_spread_and_mean_offset(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(3e5, 4e5, (2, 6, 3))
    y = rng.uniform(2e5, 3e5, (2, 6, 3))
    tx, ty = rng.uniform(3e5, 4e5, (2, 2, 3))
    es = dg.forecast_error(_traj(x, y), tx, ty, LX, LY)
    off = np.sqrt(np.mean((x.mean(axis=1) - tx) ** 2 + (y.mean(axis=1) - ty) ** 2, axis=1))
    assert np.all(es.E <= es.RMSE + off + 1e-6)
    # mean squared error splits into spread plus squared bias exactly
    np.testing.assert_allclose(es.E**2, es.RMSE**2 + off**2, rtol=1e-9)


def test_forecast_error_shape_checks():
    t = _traj(np.zeros((2, 3, 1)), np.zeros((2, 3, 1)))
    with pytest.raises(ValueError):
        dg.forecast_error(t, np.zeros((3, 1)), np.zeros((3, 1)), LX, LY)
    with pytest.raises(ValueError):
        dg.forecast_error(t, np.zeros((2, 1)), np.zeros((2, 1)), LX, LY, truth_times=[0.0, 60.0])


def test_weight_count():
    assert dg.weight_count(np.full(7, 1 / 7)) == 7
    assert dg.weight_count([1.0, 0.0, 0.0]) == 1
    assert dg.weight_count([0.4, 0.4, 0.1, 0.1]) == 2


@pytest.fixture(scope="module")
def collapse_case():
    grid = ModelGrid(20, 16, 2220.0, 2220.0)
    phys = PhysParams()
    rng = np.random.default_rng(3)
    states = []
    for _ in range(12):
        s = OceanState.at_rest(grid)
        s.hu[:] = rng.standard_normal(grid.shape).astype(np.float32) * 0.5
        s.hv[:] = rng.standard_normal(grid.shape).astype(np.float32) * 0.5
        states.append(s)
    obs = [ObservationRecord(0.0, MOORING, m, *grid.cell_center(2 + 3 * m, 3 + 2 * m), 0.0, 0.0) for m in range(5)]
    return states, obs, phys, grid


def test_collapse_zero_obs_counts_everyone(collapse_case):
    states, obs, phys, grid = collapse_case
    rows = dg.collapse_experiment(states, obs, [0], 3, 1.0, np.random.default_rng(0), phys, grid)
    assert rows == [(0, 1.0, 12.0)]


def test_collapse_too_many_platforms(collapse_case):
    states, obs, phys, grid = collapse_case
    with pytest.raises(ValueError):
        dg.collapse_experiment(states, obs, [6], 1, 1.0, np.random.default_rng(0), phys, grid)


def test_collapse_monotone_in_R(collapse_case):
    states, obs, phys, grid = collapse_case
    one = dg.collapse_experiment(states, obs, [1, 3], 10, 1.0, np.random.default_rng(4), phys, grid)
    ten = dg.collapse_experiment(states, obs, [1, 3], 10, 10.0, np.random.default_rng(4), phys, grid)
    for (n1, _, c1), (n10, _, c10) in zip(one, ten):
        assert n1 == n10 and c10 >= c1


def test_writers(tmp_path):
    dg.write_rank_hist(tmp_path / "r.csv", [3, 0, 5])
    assert (tmp_path / "r.csv").read_text() == "rank,count\n0,3\n1,0\n2,5\n"
    dg.write_collapse(tmp_path / "c.csv", [(1, 1.0, 2.5)])
    assert (tmp_path / "c.csv").read_text() == "n_obs,R_scale,mean_count\n1,1.0,2.5\n"
    es = dg.ErrorSeries(np.array([0.0, 3600.0]), np.array([1.0, 2.0]), np.array([0.5, 0.25]))
    es.write(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "time,E,RMSE\n0.0,1.0,0.5\n3600.0,2.0,0.25\n"


def test_truth_positions_lookup():
    recs = [ObservationRecord(t, "drifter", i, 10.0 * i + t, 5.0, 0.0, 0.0) for t in (0.0, 60.0) for i in (0, 1)]
    x, y = dg.truth_positions(recs, [0.0, 60.0], [1, 0])
    assert x.tolist() == [[10.0, 0.0], [70.0, 60.0]]
    with pytest.raises(ValueError):
        dg.truth_positions(recs, [120.0], [0])
