import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from driftpf import model_error as me
from driftpf.grid import CoarseGrid, ModelGrid, OceanState, PhysParams, align_coarse_offset
from driftpf.rng import stream

PHYS = PhysParams()
G10 = ModelGrid(10, 10, 2220.0, 2220.0)
G60 = ModelGrid(60, 40, 2220.0, 2220.0)


def p1():
    return me.ErrorParams.default(G10, c_omega=1)


def test_error_params():
    p = me.ErrorParams.default(ModelGrid(500, 300, 2220.0, 2220.0))
    assert p.coarse.c_omega == 5 and p.L0 == pytest.approx(0.75 * 5 * 2220.0) and p.q0 == 2.5e-4
    with pytest.raises(ValueError):
        me.ErrorParams(q0=-1.0, L0=1.0, coarse=p.coarse)
    with pytest.raises(ValueError):
        me.ErrorParams(q0=1.0, L0=1.0, coarse=p.coarse, c_soar=3)


def test_soar_kernel_examples():
    p = p1()
    assert me.soar_kernel(0.0, p) == p.q0
    assert me.soar_kernel(p.L0, p) == pytest.approx(2 * math.exp(-1) * p.q0)
    assert me.soar_kernel(p.L0, p) == pytest.approx(0.73576 * p.q0, rel=1e-5)
    d = np.linspace(0, 50 * p.L0, 200)
    v = me.soar_kernel(d, p)
    assert np.all(np.diff(v) < 0) and v[-1] < 1e-15


def test_apply_soar_impulse():
    p = me.ErrorParams.default(G60, c_omega=5)
    x = np.zeros(p.coarse.shape)
    x[3, 4] = 1.0
    y = me.apply_soar(me.CoarseField(x, p.coarse), p).values
    assert y[3, 4] == pytest.approx(p.q0)
    assert y[3, 5] == pytest.approx(me.soar_kernel(p.coarse.dx, p))
    assert y[4, 4] == pytest.approx(me.soar_kernel(p.coarse.dy, p))
    assert np.count_nonzero(y) == 25
    assert np.all(me.apply_soar(me.CoarseField.zeros(p.coarse), p).values == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_apply_soar_symmetric(seed):
    p = me.ErrorParams.default(G60, c_omega=5)
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(p.coarse.shape), r.standard_normal(p.coarse.shape)
    ax = me.apply_soar(me.CoarseField(x, p.coarse), p).values
    ay = me.apply_soar(me.CoarseField(y, p.coarse), p).values
    assert np.vdot(ax, y) == pytest.approx(np.vdot(x, ay), rel=1e-5)


def test_apply_soar_matches_dense():
    p = me.ErrorParams.default(G60, c_omega=5)
    x = np.random.default_rng(1).standard_normal(p.coarse.shape)
    D = O.soar_dense(p.coarse, p.q0, p.L0)
    np.testing.assert_allclose(me.apply_soar(me.CoarseField(x, p.coarse), p).values.ravel(), D @ x.ravel(),
                               rtol=1e-12, atol=1e-15)


def test_coarse_field_shape_checked():
    with pytest.raises(ValueError):
        me.CoarseField(np.zeros((3, 3)), CoarseGrid(G60, 5))
    p = me.ErrorParams.default(G60, c_omega=5)
    with pytest.raises(ValueError):
        me.apply_soar(me.CoarseField.zeros(CoarseGrid(G60, 1)), p)


def test_sample_xi_statistics():
    c = CoarseGrid(ModelGrid(1000, 1000, 1.0, 1.0), 1)
    xi = me.sample_xi(stream(3, 0, "model_error"), c).values
    assert abs(xi.mean()) < 4 / math.sqrt(xi.size)
    assert 0.99 <= xi.var() <= 1.01
    again = me.sample_xi(stream(3, 0, "model_error"), c).values
    assert np.array_equal(xi, again)


def test_interpolation_constants_and_colocation():
    for off in ((0, 0), (2, 1), (4, 3)):
        c = CoarseGrid(G60, 5, *off)
        f = me.interpolate_bicubic(me.CoarseField(np.full(c.shape, 2.5), c))
        np.testing.assert_allclose(f, 2.5, rtol=1e-14)
        x = np.random.default_rng(0).standard_normal(c.shape)
        f = me.interpolate_bicubic(me.CoarseField(x, c), G60)
        for b in range(c.ny):
            for a in range(c.nx):
                j, k = c.fine_cell(a, b)
                assert f[k, j] == x[b, a]


def test_interpolation_reproduces_linear_ramp():
    # a ramp away from the periodic seam
    grid = ModelGrid(100, 100, 1.0, 1.0)
    c = CoarseGrid(grid, 5)
    b, a = np.mgrid[0 : c.ny, 0 : c.nx]
    ramp = 1.0 + 0.3 * a + 0.2 * b
    f = me.interpolate_bicubic(me.CoarseField(ramp, c))
    k, j = np.mgrid[0 : grid.ny, 0 : grid.nx]
    exact = 1.0 + 0.3 * j / 5 + 0.2 * k / 5
    inner = (slice(10, 85), slice(10, 85))
    np.testing.assert_allclose(f[inner], exact[inner], rtol=1e-5)


def test_interpolation_matches_dense_keys_kernel():
    c = CoarseGrid(G60, 5, 2, 3)
    x = np.random.default_rng(2).standard_normal(c.shape)
    np.testing.assert_allclose(me.interpolate_bicubic(me.CoarseField(x, c)).ravel(), O.interp_dense(c) @ x.ravel(),
                               atol=1e-12)


def test_geostrophic_balance_examples():
    d = np.full(G60.shape, 0.3)
    hu, hv = me.geostrophic_balance(d, PHYS, G60)
    assert np.all(hu == 0) and np.all(hv == 0)
    k = np.arange(G60.ny)
    d = np.repeat(np.sin(2 * np.pi * k / G60.ny)[:, None], G60.nx, axis=1)
    hu, hv = me.geostrophic_balance(d, PHYS, G60)
    expect = -PHYS.gb_coeff * np.cos(2 * np.pi * k / G60.ny) * math.sin(2 * np.pi / G60.ny) / G60.dy
    np.testing.assert_allclose(hu[:, 0], expect, rtol=1e-10, atol=1e-12)
    assert np.all(hv == 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_geostrophic_balance_linear(seed, s):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal(G60.shape), r.standard_normal(G60.shape)
    lhs = me.geostrophic_balance(a + s * b, PHYS, G60)
    ra, rb = me.geostrophic_balance(a, PHYS, G60), me.geostrophic_balance(b, PHYS, G60)
    for m in range(2):
        np.testing.assert_allclose(lhs[m], ra[m] + s * rb[m], rtol=1e-9, atol=1e-9 * PHYS.gb_coeff)


def test_q_half_matches_dense_composition_c1():
    p = p1()
    Q = O.q_half_dense(p, PHYS)
    cols = []
    for i in range(p.coarse.n_points):
        e = np.zeros(p.coarse.n_points)
        e[i] = 1.0
        cols.append(O.stack(me.apply_Q_half(me.CoarseField(e.reshape(p.coarse.shape), p.coarse), p, PHYS)))
    np.testing.assert_allclose(np.array(cols).T, Q, atol=1e-5 * np.abs(Q).max())


def test_q_half_matches_dense_composition_c5():
    p = me.ErrorParams.default(ModelGrid(40, 40, 2220.0, 2220.0), c_omega=5)
    Q = O.q_half_dense(p, PHYS)
    x = np.random.default_rng(5).standard_normal(p.coarse.shape)
    got = O.stack(me.apply_Q_half(me.CoarseField(x, p.coarse), p, PHYS))
    np.testing.assert_allclose(got, Q @ x.ravel(), atol=1e-9 * np.abs(Q).max())


def test_perturbation_is_balanced_and_float32():
    p = me.ErrorParams.default(G60, c_omega=5)
    s = OceanState.at_rest(G60)
    out = me.perturb_state(s, stream(1, 0, "model_error"), p, PHYS)
    assert out.eta.dtype == np.float32
    d = out.eta.astype(np.float64)
    hu, hv = me.geostrophic_balance(d, PHYS, G60)
    # float32 storage of the increment bounds the residual
    assert np.max(np.abs(out.hu - hu)) < 1e-5 * np.max(np.abs(hu)) + 1e-3
    assert np.max(np.abs(out.hv - hv)) < 1e-5 * np.max(np.abs(hv)) + 1e-3


def test_perturb_state_matches_reference_path():
    p = me.ErrorParams.default(G60, c_omega=5)
    s = OceanState(np.random.default_rng(0).standard_normal(G60.shape) * 0.1, np.ones(G60.shape), np.zeros(G60.shape))
    a = me.perturb_state(s, stream(9, 2, "model_error"), p, PHYS)
    inc = me.sample_model_error(stream(9, 2, "model_error"), p, PHYS)
    b = me.add_increment(s, inc, PHYS)
    assert a.equals(b)


def test_perturb_state_determinism_and_zero_amplitude():
    p = me.ErrorParams.default(G60, c_omega=5)
    s = OceanState.at_rest(G60)
    a = me.perturb_state(s, stream(1, 0, "model_error"), p, PHYS)
    b = me.perturb_state(s, stream(1, 0, "model_error"), p, PHYS)
    c = me.perturb_state(s, stream(1, 1, "model_error"), p, PHYS)
    assert a.equals(b) and not a.equals(c)
    z = me.ErrorParams(0.0, p.L0, p.coarse)
    assert me.perturb_state(s, stream(1, 0, "model_error"), z, PHYS).equals(s)


def test_perturbation_magnitude_pinned():
    # per-step RMS of d eta at the default amplitude, measured at build time
    p = me.ErrorParams.default(G60, c_omega=5)
    r = stream(4, 0, "model_error")
    rms = np.mean([np.sqrt(np.mean(me.sample_model_error(r, p, PHYS)[0] ** 2)) for _ in range(200)])
    assert rms == pytest.approx(4.712e-4, rel=0.02)


def test_dry_perturbation_raises():
    p = me.ErrorParams(1e3, 5000.0, CoarseGrid(G60, 5))
    s = OceanState.at_rest(G60)
    with pytest.raises(me.DryStateError):
        me.perturb_state(s, stream(1, 0, "model_error"), p, PHYS)


def test_adjoint_geo_balance_examples():
    c = CoarseGrid(G60, 5)
    z = me.adjoint_geo_balance([0.0, 0.0], (4, 3), PHYS, c).values
    assert np.all(z == 0)
    v = me.adjoint_geo_balance([1.0, 0.0], (4, 3), PHYS, c).values
    assert np.count_nonzero(v) == 2
    assert v[4, 4] == pytest.approx(-PHYS.gb_coeff / (2 * c.dy))
    assert v[2, 4] == pytest.approx(PHYS.gb_coeff / (2 * c.dy))
    v = me.adjoint_geo_balance([0.3, -0.7], (0, 0), PHYS, c).values
    assert np.count_nonzero(v) == 4
    assert v[0, 1] == pytest.approx(-0.7 * PHYS.gb_coeff / (2 * c.dx))
    assert v[0, -1] == pytest.approx(0.7 * PHYS.gb_coeff / (2 * c.dx))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 9), st.integers(0, 9), st.floats(-5, 5), st.floats(-5, 5))
def test_adjoint_consistency_c1(j, k, y_hu, y_hv):
    # <GB x, H^T y> = <x, GB^T y> on a zero-eta state with c_omega = 1
    c = CoarseGrid(G10, 1)
    x = np.random.default_rng(j * 10 + k).standard_normal(G10.shape)
    hu, hv = me.geostrophic_balance(x, PHYS, G10)
    lhs = y_hu * hu[k, j] + y_hv * hv[k, j]
    rhs = float(np.vdot(x, me.adjoint_geo_balance([y_hu, y_hv], (j, k), PHYS, c).values))
    assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-5 * PHYS.gb_coeff / G10.dx)


def test_q_half_T_footprint_and_zero():
    p = me.ErrorParams.default(ModelGrid(100, 60, 2220.0, 2220.0), c_omega=5)
    c = align_coarse_offset((52, 33), p.coarse)
    z = me.apply_Q_half_T([((52, 33), (0.0, 0.0))], p, PHYS, c).values
    assert np.all(z == 0)
    v = me.apply_Q_half_T([((52, 33), (1.0, 0.0))], p, PHYS, c).values
    rows, cols = np.nonzero(v)
    assert (rows.max() - rows.min() + 1, cols.max() - cols.min() + 1) == (7, 5)
    # the antisymmetric dipole cancels exactly on the row through the observed point
    assert rows.size == 30


def test_q_half_T_requires_alignment():
    p = me.ErrorParams.default(G60, c_omega=5)
    with pytest.raises(ValueError):
        me.apply_Q_half_T([((52, 33), (1.0, 0.0))], p, PHYS)


def test_q_half_T_matches_dense_c1():
    p = p1()
    Q = O.q_half_dense(p, PHYS)
    for cell in ((0, 0), (5, 5), (9, 3)):
        H = O.obs_dense(G10, cell)
        y = np.array([0.4, -1.3])
        got = me.apply_Q_half_T([(cell, y)], p, PHYS).values.ravel()
        np.testing.assert_allclose(got, Q.T @ H.T @ y, atol=1e-4 * np.abs(Q.T @ H.T @ y).max())


def test_q_half_T_matches_coarse_dense_chain_c5():
    # with c_omega > 1 the interpolation is skipped: SOAR GB^T on the aligned coarse grid
    p = me.ErrorParams.default(ModelGrid(40, 40, 2220.0, 2220.0), c_omega=5)
    cell = (17, 23)
    c = align_coarse_offset(cell, p.coarse)
    a, b = c.coarse_point(*cell)
    GBc = O.balance_dense(c.nx, c.ny, c.dx, c.dy, PHYS.gb_coeff)
    n = c.n_points
    y = np.array([1.1, 0.6])
    ht = np.zeros(3 * n)
    ht[n + b * c.nx + a], ht[2 * n + b * c.nx + a] = y
    expect = O.soar_dense(c, p.q0, p.L0) @ GBc.T @ ht
    got = me.apply_Q_half_T([(cell, y)], p, PHYS, c).values.ravel()
    np.testing.assert_allclose(got, expect, atol=1e-10 * np.abs(expect).max())


@pytest.mark.slow
def test_empirical_covariance_matches_dense():
    grid = ModelGrid(20, 12, 2220.0, 2220.0)
    p = me.ErrorParams.default(grid, c_omega=1)
    Q = O.q_half_dense(p, PHYS)
    n = grid.n_cells
    C = (Q @ Q.T)[:n, :n]
    r = stream(6, 0, "model_error")
    draws = np.array([me.sample_model_error(r, p, PHYS)[0].ravel() for _ in range(10000)])
    emp = draws.T @ draws / draws.shape[0]
    i0 = 5 * grid.nx + 5
    for i1 in (i0, i0 + 1, i0 + 2, i0 + grid.nx, i0 + 3 * grid.nx + 3):
        se = math.sqrt((C[i0, i0] * C[i1, i1] + C[i0, i1] ** 2) / draws.shape[0])
        assert abs(emp[i0, i1] - C[i0, i1]) < 5 * se
