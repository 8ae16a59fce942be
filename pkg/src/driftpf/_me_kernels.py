"""Compiled kernels for model-error generation.

They reproduce the numpy reference expressions operation for operation, so
results are bitwise identical to the reference path.
"""

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True, error_model="numpy")


@nb.njit(**_JIT)
def soar_apply(x, W):
    """Periodic 2-D correlation of x with the (2c+1)x(2c+1) stencil W."""
    ny, nx = x.shape
    c = W.shape[0] // 2
    out = np.zeros_like(x)
    src = np.empty(nx + 2 * c)
    for db in range(-c, c + 1):
        for k in range(ny):
            row = x[(k - db) % ny]
            # src[j + c] = row[(j) % nx] for j in [-c, nx + c)
            for j in range(nx + 2 * c):
                src[j] = row[(j - c) % nx]
            o = out[k]
            for da in range(-c, c + 1):
                w = W[db + c, da + c]
                for j in range(nx):
                    o[j] += w * src[j - da + c]
    return out


@nb.njit(**_JIT)
def _balance_row(e0, u0, v0, dm, d0, dp, C, dx, dy, H, oe, ou, ov):
    nx = d0.shape[0]
    hmin = np.inf
    for j in range(nx):
        jp = j + 1 if j + 1 < nx else 0
        jm = j - 1 if j > 0 else nx - 1
        e = np.float32(np.float64(e0[j]) + d0[j])
        oe[j] = e
        h = np.float64(e) + H
        hmin = min(hmin, h)
        dhu = -C * (dp[j] - dm[j]) / (2.0 * dy)
        dhv = C * (d0[jp] - d0[jm]) / (2.0 * dx)
        ou[j] = np.float32(np.float64(u0[j]) + dhu)
        ov[j] = np.float32(np.float64(v0[j]) + dhv)
    return hmin


@nb.njit(**_JIT)
def balance_add(eta, hu, hv, d, C, dx, dy, H):
    """State plus (d, balanced hu, balanced hv) in float32; also returns min(H + eta)."""
    ny, nx = d.shape
    oe = np.empty((ny, nx), np.float32)
    ou = np.empty((ny, nx), np.float32)
    ov = np.empty((ny, nx), np.float32)
    hmin = np.inf
    for k in range(ny):
        kp = k + 1 if k + 1 < ny else 0
        km = k - 1 if k > 0 else ny - 1
        h = _balance_row(eta[k], hu[k], hv[k], d[km], d[k], d[kp], C, dx, dy, H, oe[k], ou[k], ov[k])
        hmin = min(hmin, h)
    return oe, ou, ov, hmin
