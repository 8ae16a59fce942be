"""Compiled stencil kernels for the rotating shallow-water solver.

Scheme: central-upwind fluxes on a doubly periodic grid with limited
piecewise-linear reconstruction.  Surface elevation is reconstructed through
the balance variables

    K = g*eta - f*V,  dV/dx = v        (x direction)
    L = g*eta + f*U,  dU/dy = u        (y direction)

whose cell-to-cell increments are evaluated locally with the trapezoidal rule,
so no global potential is ever formed.  For states in discrete geostrophic
balance the increments of K and L vanish, the face values of eta coincide on
both sides of every face and the numerical diffusion in the mass equation is
switched off.  The tangential momentum is carried upwind by the mass flux, so
straight geostrophic jets are steady to round-off.

State arrays, scratch arrays and stencil arithmetic are float32; time-step
bookkeeping is float64.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_DRY = 1
STATUS_NONFINITE = 2


_FM = {"nsz", "arcp", "contract", "afn", "reassoc"}
_JIT = dict(cache=True, nogil=True, error_model="numpy", fastmath=_FM)

_F = np.float32
HALF = _F(0.5)
ZERO = _F(0.0)
ONE = _F(1.0)


@njit(inline="always", fastmath=_FM)
def _minmod3(a, b, c):
    lo = min(a, min(b, c))
    hi = max(a, max(b, c))
    return lo if lo > ZERO else (hi if hi < ZERO else ZERO)


@njit(inline="always", fastmath=_FM)
def _limited(m, c, p, theta):
    dm = c - m
    dp = p - c
    return _minmod3(theta * dm, HALF * (dm + dp), theta * dp)


# Loop indices are unsigned so that numba drops its negative-index
# wraparound handling, which otherwise blocks vectorization of the stencils.
_U = np.uint64
U0 = _U(0)
U1 = _U(1)
U2 = _U(2)
U3 = _U(3)


@njit(**_JIT)
def _halo(a):
    """Fill the two-cell periodic halo of a padded array in place."""
    n0 = _U(a.shape[0]) - _U(4)
    n1 = _U(a.shape[1]) - _U(4)
    for k in range(U2, n0 + U2):
        a[k, U0] = a[k, n1]
        a[k, U1] = a[k, n1 + U1]
        a[k, n1 + U2] = a[k, U2]
        a[k, n1 + U3] = a[k, U3]
    for j in range(U0, n1 + _U(4)):
        a[U0, j] = a[n0, j]
        a[U1, j] = a[n0 + U1, j]
        a[n0 + U2, j] = a[U2, j]
        a[n0 + U3, j] = a[U3, j]


@njit(inline="always", fastmath=_FM)
def _x_face(er, ur, vr, a0, a1, a2, i, j, H, g, hfdx, ig):
    """Central-upwind flux between cells i (left) and j (right) of a row."""
    eL = er[i] + (HALF * a0[i] + hfdx * vr[i]) * ig
    eR = er[j] - (HALF * a0[j] + hfdx * vr[j]) * ig
    uL = ur[i] + HALF * a1[i]
    uR = ur[j] - HALF * a1[j]
    vL = vr[i] + HALF * a2[i]
    vR = vr[j] - HALF * a2[j]
    hL = H + eL
    hR = H + eR
    cL = math.sqrt(g * hL)
    cR = math.sqrt(g * hR)
    ap = max(max(uL + cL, uR + cR), ZERO)
    am = min(min(uL - cL, uR - cR), ZERO)
    qL = hL * uL
    qR = hR * uR
    # pressure flux relative to the rest state: g*h^2/2 - g*H^2/2
    pL = g * eL * (H + HALF * eL)
    pR = g * eR * (H + HALF * eR)
    inv = ONE / (ap - am)
    dif = ap * am * inv
    m = (ap * qL - am * qR) * inv + dif * (eR - eL)
    fn = (ap * (qL * uL + pL) - am * (qR * uR + pR)) * inv + dif * (qR - qL)
    ft = m * (vL if m > ZERO else vR)
    return m, fn, ft


@njit(**_JIT)
def rhs(U, out, wrk, H, g, f, dx, dy, theta):
    """Semi-discrete tendencies of U = (eta, hu, hv) written into out.

    All arrays and scalars are float32; wrk has shape (>=12, ny+4, nx+4).
    Returns a status code.
    """
    ny = _U(U.shape[1])
    nx = _U(U.shape[2])
    e = wrk[0]
    u = wrk[1]
    v = wrk[2]
    sx0 = wrk[3]
    sx1 = wrk[4]
    sx2 = wrk[5]
    sy0 = wrk[6]
    sy1 = wrk[7]
    sy2 = wrk[8]
    F0 = wrk[9]
    F1 = wrk[10]
    F2 = wrk[11]

    dry = False
    for k in range(U0, ny):
        eta_r = U[0, k]
        hu_r = U[1, k]
        hv_r = U[2, k]
        er = e[k + U2]
        ur = u[k + U2]
        vr = v[k + U2]
        for j in range(U0, nx):
            h = H + eta_r[j]
            dry |= not (h > ZERO)
            r = ONE / h
            er[j + U2] = eta_r[j]
            ur[j + U2] = hu_r[j] * r
            vr[j + U2] = hv_r[j] * r
    if dry:
        return STATUS_DRY
    _halo(e)
    _halo(u)
    _halo(v)

    ig = ONE / g
    hfdx = HALF * f * dx
    hfdy = HALF * f * dy
    idx = ONE / dx
    idy = ONE / dy

    # slopes: x direction of K = g*eta - f*V, u, v; y direction of L = g*eta + f*U, v, u
    for k in range(U1, ny + U3):
        er = e[k]
        ur = u[k]
        vr = v[k]
        eS = e[k - U1]
        eN = e[k + U1]
        uS = u[k - U1]
        uN = u[k + U1]
        vS = v[k - U1]
        vN = v[k + U1]
        a0 = sx0[k]
        a1 = sx1[k]
        a2 = sx2[k]
        b0 = sy0[k]
        b1 = sy1[k]
        b2 = sy2[k]
        for j in range(U1, nx + U3):
            jm = j - U1
            jp = j + U1
            dm = g * (er[j] - er[jm]) - hfdx * (vr[jm] + vr[j])
            dp = g * (er[jp] - er[j]) - hfdx * (vr[j] + vr[jp])
            a0[j] = _minmod3(theta * dm, HALF * (dm + dp), theta * dp)
            a1[j] = _limited(ur[jm], ur[j], ur[jp], theta)
            a2[j] = _limited(vr[jm], vr[j], vr[jp], theta)
            dm = g * (er[j] - eS[j]) + hfdy * (uS[j] + ur[j])
            dp = g * (eN[j] - er[j]) + hfdy * (ur[j] + uN[j])
            b0[j] = _minmod3(theta * dm, HALF * (dm + dp), theta * dp)
            b1[j] = _limited(vS[j], vr[j], vN[j], theta)
            b2[j] = _limited(uS[j], ur[j], uN[j], theta)

    # x faces: F[k, j] is the flux through the west face of padded cell j
    for k in range(U2, ny + U2):
        er = e[k]
        ur = u[k]
        vr = v[k]
        a0 = sx0[k]
        a1 = sx1[k]
        a2 = sx2[k]
        G0 = F0[k]
        G1 = F1[k]
        G2 = F2[k]
        for j in range(U2, nx + U3):
            m, fn, ft = _x_face(er, ur, vr, a0, a1, a2, j - U1, j, H, g, hfdx, ig)
            G0[j] = m
            G1[j] = fn
            G2[j] = ft
    for k in range(U0, ny):
        o0 = out[0, k]
        o1 = out[1, k]
        o2 = out[2, k]
        hu_r = U[1, k]
        hv_r = U[2, k]
        G0 = F0[k + U2]
        G1 = F1[k + U2]
        G2 = F2[k + U2]
        for j in range(U0, nx):
            jj = j + U2
            o0[j] = -(G0[jj + U1] - G0[jj]) * idx
            o1[j] = -(G1[jj + U1] - G1[jj]) * idx + f * hv_r[j]
            o2[j] = -(G2[jj + U1] - G2[jj]) * idx - f * hu_r[j]

    # y faces: F[k, j] is the flux through the south face of padded cell k
    for k in range(U2, ny + U3):
        i = k - U1
        eS = e[i]
        eN = e[k]
        uS = u[i]
        uN = u[k]
        vS = v[i]
        vN = v[k]
        bS0 = sy0[i]
        bN0 = sy0[k]
        bS1 = sy1[i]
        bN1 = sy1[k]
        bS2 = sy2[i]
        bN2 = sy2[k]
        G0 = F0[k]
        G1 = F1[k]
        G2 = F2[k]
        for j in range(U2, nx + U2):
            m, fn, ft = _y_face(
                eS[j], eN[j], vS[j], vN[j], uS[j], uN[j],
                bS0[j], bN0[j], bS1[j], bN1[j], bS2[j], bN2[j],
                H, g, hfdy, ig,
            )
            G0[j] = m
            G1[j] = ft
            G2[j] = fn
    for k in range(U0, ny):
        o0 = out[0, k]
        o1 = out[1, k]
        o2 = out[2, k]
        kk = k + U2
        GS0 = F0[kk]
        GN0 = F0[kk + U1]
        GS1 = F1[kk]
        GN1 = F1[kk + U1]
        GS2 = F2[kk]
        GN2 = F2[kk + U1]
        for j in range(U0, nx):
            jj = j + U2
            o0[j] -= (GN0[jj] - GS0[jj]) * idy
            o1[j] -= (GN1[jj] - GS1[jj]) * idy
            o2[j] -= (GN2[jj] - GS2[jj]) * idy
    return STATUS_OK


@njit(inline="always", fastmath=_FM)
def _y_face(e0, e1, n0, n1, t0, t1, s0a, s0b, s1a, s1b, s2a, s2b, H, g, hfdy, ig):
    """Flux between a southern cell (suffix 0/a) and a northern one (1/b).

    n: normal velocity v, t: tangential velocity u, s0: slope of L.
    """
    eS = e0 + (HALF * s0a - hfdy * t0) * ig
    eN = e1 - (HALF * s0b - hfdy * t1) * ig
    vS = n0 + HALF * s1a
    vN = n1 - HALF * s1b
    uS = t0 + HALF * s2a
    uN = t1 - HALF * s2b
    hS = H + eS
    hN = H + eN
    cS = math.sqrt(g * hS)
    cN = math.sqrt(g * hN)
    bp = max(max(vS + cS, vN + cN), ZERO)
    bm = min(min(vS - cS, vN - cN), ZERO)
    qS = hS * vS
    qN = hN * vN
    pS = g * eS * (H + HALF * eS)
    pN = g * eN * (H + HALF * eN)
    inv = ONE / (bp - bm)
    dif = bp * bm * inv
    m = (bp * qS - bm * qN) * inv + dif * (eN - eS)
    fn = (bp * (qS * vS + pS) - bm * (qN * vN + pN)) * inv + dif * (qN - qS)
    ft = m * (uS if m > ZERO else uN)
    return m, fn, ft


@njit(**_JIT)
def max_wave_rates(U, H, g):
    """Return (max |u| + c, max |v| + c) over all cells, or (-1, -1) if a cell is dry."""
    ny = _U(U.shape[1])
    nx = _U(U.shape[2])
    ax = ZERO
    ay = ZERO
    dry = False
    for k in range(U0, ny):
        eta_r = U[0, k]
        hu_r = U[1, k]
        hv_r = U[2, k]
        for j in range(U0, nx):
            h = H + eta_r[j]
            dry |= not (h > ZERO)
            c = math.sqrt(g * h)
            r = ONE / h
            ax = max(ax, abs(hu_r[j] * r) + c)
            ay = max(ay, abs(hv_r[j] * r) + c)
    if dry:
        return -1.0, -1.0
    return float(ax), float(ay)


@njit(**_JIT)
def cfl_limit(U, H, g, dx, dy, courant):
    ax, ay = max_wave_rates(U, H, g)
    if ax < 0.0:
        return -1.0
    return courant * 0.25 * min(float(dx) / ax, float(dy) / ay)


@njit(**_JIT)
def _axpy(U, K, dt32, out):
    """out = U + dt*K over flattened float32 arrays."""
    n = _U(U.size)
    for i in range(U0, n):
        out[i] = U[i] + dt32 * K[i]


@njit(**_JIT)
def _heun_finish(U, U1, K, dt32):
    """U = (U + U1 + dt*K)/2; returns False if any value is non-finite."""
    n = _U(U.size)
    ok = True
    for i in range(U0, n):
        val = HALF * U[i] + HALF * (U1[i] + dt32 * K[i])
        U[i] = val
        ok &= math.isfinite(val)
    return ok


@njit(**_JIT)
def ssp_rk2_substep(U, dt, U1, K, wrk, H, g, f, dx, dy, theta):
    """One SSP-RK2 (Heun) substep of length dt applied to U in place."""
    dt32 = _F(dt)
    st = rhs(U, K, wrk, H, g, f, dx, dy, theta)
    if st != STATUS_OK:
        return st
    _axpy(U.reshape(-1), K.reshape(-1), dt32, U1.reshape(-1))
    st = rhs(U1, K, wrk, H, g, f, dx, dy, theta)
    if st != STATUS_OK:
        return st
    if not _heun_finish(U.reshape(-1), U1.reshape(-1), K.reshape(-1), dt32):
        return STATUS_NONFINITE
    return STATUS_OK


@njit(**_JIT)
def advance(U, duration, U1, K, wrk, H, g, f, dx, dy, theta, courant, dts):
    """Advance U in place by exactly `duration` seconds with CFL-limited substeps.

    The step length is recomputed from the current state before every substep
    and the last substep is truncated to land on the end time.  Substep
    lengths are written into dts; returns (status, number of substeps).
    """
    remaining = duration
    n = 0
    while remaining > 0.0:
        lim = cfl_limit(U, H, g, dx, dy, courant)
        if lim <= 0.0:
            return STATUS_DRY, n
        dt = min(lim, remaining)
        if n < dts.shape[0]:
            dts[n] = dt
        st = ssp_rk2_substep(U, dt, U1, K, wrk, H, g, f, dx, dy, theta)
        n += 1
        if st != STATUS_OK:
            return st, n
        # guard against a vanishing remainder caused by round-off
        if remaining - dt <= 1e-9 * duration:
            remaining = 0.0
        else:
            remaining -= dt
    return STATUS_OK, n


@njit(**_JIT)
def advance_batch(Us, duration, U1, K, wrk, H, g, f, dx, dy, theta, courant, status, nsub):
    """advance() applied to every member of a stacked (N, 3, ny, nx) batch."""
    dts = np.empty(0, np.float64)
    for i in range(Us.shape[0]):
        st, n = advance(Us[i], duration, U1, K, wrk, H, g, f, dx, dy, theta, courant, dts)
        status[i] = st
        nsub[i] = n


def scratch(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ny, nx = shape
    return (
        np.empty((3, ny, nx), np.float32),
        np.empty((3, ny, nx), np.float32),
        np.empty((12, ny + 4, nx + 4), np.float32),
    )
