"""Dense brute-force assemblies used as independent references in the tests.

State vectors are ordered [eta, hu, hv], each field flattened in (k, j)
order with j fastest.  Coarse vectors are flattened the same way.
"""

import math

import numpy as np


def soar_dense(coarse, q0, L0, cutoff=2):
    ny, nx = coarse.shape
    n = nx * ny
    M = np.zeros((n, n))
    for b in range(ny):
        for a in range(nx):
            for bb in range(ny):
                for aa in range(nx):
                    da = (aa - a + nx // 2) % nx - nx // 2
                    db = (bb - b + ny // 2) % ny - ny // 2
                    if abs(da) <= cutoff and abs(db) <= cutoff:
                        d = math.hypot(da * coarse.dx, db * coarse.dy)
                        M[b * nx + a, bb * nx + aa] = q0 * (1 + d / L0) * math.exp(-d / L0)
    return M


def cubic_convolution(x):
    """Keys cubic convolution kernel with a = -1/2."""
    x = abs(x)
    if x <= 1:
        return 1.5 * x**3 - 2.5 * x**2 + 1.0
    if x < 2:
        return -0.5 * x**3 + 2.5 * x**2 - 4.0 * x + 2.0
    return 0.0


def interp_dense(coarse):
    g = coarse.grid
    c = coarse.c_omega
    M = np.zeros((g.ny * g.nx, coarse.ny * coarse.nx))
    for k in range(g.ny):
        for j in range(g.nx):
            sx = (j - coarse.offset_j) / c
            sy = (k - coarse.offset_k) / c
            for b in range(math.floor(sy) - 1, math.floor(sy) + 3):
                for a in range(math.floor(sx) - 1, math.floor(sx) + 3):
                    w = cubic_convolution(sx - a) * cubic_convolution(sy - b)
                    M[k * g.nx + j, (b % coarse.ny) * coarse.nx + (a % coarse.nx)] += w
    return M


def balance_dense(nx, ny, dx, dy, C):
    """Rows [eta; hu; hv] as functions of an eta field."""
    n = nx * ny
    M = np.zeros((3 * n, n))
    for k in range(ny):
        for j in range(nx):
            i = k * nx + j
            M[i, i] = 1.0
            M[n + i, ((k + 1) % ny) * nx + j] -= C / (2 * dy)
            M[n + i, ((k - 1) % ny) * nx + j] += C / (2 * dy)
            M[2 * n + i, k * nx + (j + 1) % nx] += C / (2 * dx)
            M[2 * n + i, k * nx + (j - 1) % nx] -= C / (2 * dx)
    return M


def q_half_dense(params, phys):
    coarse = params.coarse
    g = coarse.grid
    return balance_dense(g.nx, g.ny, g.dx, g.dy, phys.gb_coeff) @ interp_dense(coarse) @ soar_dense(
        coarse, params.q0, params.L0
    )


def obs_dense(grid, cell):
    j, k = cell
    n = grid.nx * grid.ny
    H = np.zeros((2, 3 * n))
    H[0, n + k * grid.nx + j] = 1.0
    H[1, 2 * n + k * grid.nx + j] = 1.0
    return H


def window_indices(coarse, point, radius=3):
    a, b = point
    off = range(-radius, radius + 1)
    return np.array([((b + db) % coarse.ny) * coarse.nx + (a + da) % coarse.nx for db in off for da in off])


def stack(fields):
    return np.concatenate([np.asarray(f, dtype=np.float64).ravel() for f in fields])
