"""Model-error covariance operators.

A model-error sample is built as

    q = Q^{1/2} xi = GB( I( SOAR xi ) ),   xi ~ N(0, I) on the coarse grid,

where SOAR is a truncated second-order auto-regressive correlation on the
coarse grid, I is bicubic (Catmull-Rom) interpolation to the fine cell
centers and GB adds the geostrophically balanced transports.  The
approximate transpose used by the filter is

    Q^{1/2,T} H^T y ~= SOAR( GB^T y ),

evaluated on a coarse grid whose offset puts a point on the observed cell.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import _me_kernels as kern
from .grid import CoarseGrid, ModelGrid, OceanState, PhysParams, align_coarse_offset


@dataclass(frozen=True)
class ErrorParams:
    q0: float
    L0: float
    coarse: CoarseGrid
    c_soar: int = 2

    def __post_init__(self):
        if not self.q0 >= 0:
            raise ValueError("q0 must be non-negative")
        if not self.L0 > 0:
            raise ValueError("L0 must be positive")
        if self.c_soar != 2:
            raise ValueError("the SOAR cut-off is fixed at two coarse points")

    @classmethod
    def default(cls, grid: ModelGrid, q0: float = 2.5e-4, c_omega: int = 5, L0: float | None = None):
        coarse = CoarseGrid(grid, c_omega)
        return cls(q0=q0, L0=0.75 * coarse.dx if L0 is None else L0, coarse=coarse)

    def with_coarse(self, coarse: CoarseGrid) -> "ErrorParams":
        return replace(self, coarse=coarse)


@dataclass
class CoarseField:
    values: np.ndarray
    coarse: CoarseGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.coarse.shape:
            raise ValueError(f"values shape {self.values.shape} != coarse grid {self.coarse.shape}")

    @classmethod
    def zeros(cls, coarse: CoarseGrid) -> "CoarseField":
        return cls(np.zeros(coarse.shape), coarse)

    def copy(self) -> "CoarseField":
        return CoarseField(self.values.copy(), self.coarse)


def soar_kernel(dist, params: ErrorParams):
    r = np.asarray(dist, dtype=np.float64) / params.L0
    return params.q0 * (1.0 + r) * np.exp(-r)


@lru_cache(maxsize=64)
def _soar_weights(q0: float, L0: float, cdx: float, cdy: float, c_soar: int) -> np.ndarray:
    off = np.arange(-c_soar, c_soar + 1)
    d = np.hypot(off[None, :] * cdx, off[:, None] * cdy)
    r = d / L0
    return q0 * (1.0 + r) * np.exp(-r)


def soar_weights(params: ErrorParams) -> np.ndarray:
    """(2c+1)x(2c+1) stencil indexed [db + c, da + c] for offsets (da, db)."""
    c = params.coarse
    return _soar_weights(params.q0, params.L0, c.dx, c.dy, params.c_soar)


def apply_soar(field: CoarseField, params: ErrorParams) -> CoarseField:
    if field.coarse.shape != params.coarse.shape:
        raise ValueError("field and parameters refer to different coarse grids")
    return CoarseField(kern.soar_apply(field.values, soar_weights(params)), field.coarse)


def sample_xi(rng: np.random.Generator, coarse: CoarseGrid) -> CoarseField:
    return CoarseField(rng.standard_normal(coarse.shape), coarse)


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    """Weights of points -1, 0, 1, 2 for fractional position t in [0, 1)."""
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            0.5 * (-t3 + 2 * t2 - t),
            0.5 * (3 * t3 - 5 * t2 + 2),
            0.5 * (-3 * t3 + 4 * t2 + t),
            0.5 * (t3 - t2),
        ],
        axis=-1,
    )


def _interp_matrix(n_fine: int, c: int, offset: int) -> np.ndarray:
    """Dense (n_fine, n_coarse) periodic cubic-convolution matrix along one axis."""
    n_coarse = n_fine // c
    s = (np.arange(n_fine) - offset) / c
    a0 = np.floor(s).astype(int)
    t = s - a0
    w = _catmull_rom(t)
    # co-located cells reproduce the coarse value exactly
    w[t == 0] = (0.0, 1.0, 0.0, 0.0)
    M = np.zeros((n_fine, n_coarse))
    rows = np.arange(n_fine)
    for m in range(4):
        np.add.at(M, (rows, (a0 - 1 + m) % n_coarse), w[:, m])
    return M


@lru_cache(maxsize=128)
def interpolation_matrices(coarse: CoarseGrid) -> tuple[np.ndarray, np.ndarray]:
    g = coarse.grid
    Wy = _interp_matrix(g.ny, coarse.c_omega, coarse.offset_k)
    Wx = _interp_matrix(g.nx, coarse.c_omega, coarse.offset_j)
    return Wy, np.ascontiguousarray(Wx.T)


def interpolate_bicubic(field: CoarseField, grid: ModelGrid | None = None) -> np.ndarray:
    """Bicubic surface through the surrounding 4x4 coarse points at every fine cell center."""
    if grid is not None and grid != field.coarse.grid:
        raise ValueError("coarse grid was not derived from this model grid")
    Wy, WxT = interpolation_matrices(field.coarse)
    return Wy @ field.values @ WxT


def geostrophic_balance(delta_eta: np.ndarray, phys: PhysParams, grid: ModelGrid) -> tuple[np.ndarray, np.ndarray]:
    C = phys.gb_coeff
    d = np.asarray(delta_eta, dtype=np.float64)
    dhu = -C * (np.roll(d, -1, axis=0) - np.roll(d, 1, axis=0)) / (2.0 * grid.dy)
    dhv = C * (np.roll(d, -1, axis=1) - np.roll(d, 1, axis=1)) / (2.0 * grid.dx)
    return dhu, dhv


def apply_Q_half(field: CoarseField, params: ErrorParams, phys: PhysParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map coarse noise to a balanced state increment (d eta, d hu, d hv)."""
    grid = field.coarse.grid
    deta = interpolate_bicubic(apply_soar(field, params.with_coarse(field.coarse)))
    dhu, dhv = geostrophic_balance(deta, phys, grid)
    return deta, dhu, dhv


class DryStateError(ValueError):
    pass


def add_increment(state: OceanState, inc: tuple[np.ndarray, np.ndarray, np.ndarray], phys: PhysParams) -> OceanState:
    eta = (state.eta + inc[0]).astype(np.float32)
    if np.min(eta) + phys.H_eq <= 0:
        raise DryStateError("perturbation produced a dry cell")
    hu = (state.hu + inc[1]).astype(np.float32)
    hv = (state.hv + inc[2]).astype(np.float32)
    return OceanState(eta, hu, hv, state.t)


def sample_model_error(rng: np.random.Generator, params: ErrorParams, phys: PhysParams):
    return apply_Q_half(sample_xi(rng, params.coarse), params, phys)


def perturb_state(state: OceanState, rng: np.random.Generator, params: ErrorParams, phys: PhysParams) -> OceanState:
    """Add one model-error draw q = Q^{1/2} xi to the state."""
    xi = sample_xi(rng, params.coarse)
    if params.q0 == 0:
        return state.copy()
    grid = params.coarse.grid
    deta = interpolate_bicubic(apply_soar(xi, params))
    eta, hu, hv, hmin = kern.balance_add(
        state.eta, state.hu, state.hv, deta, phys.gb_coeff, grid.dx, grid.dy, phys.H_eq
    )
    if hmin <= 0:
        raise DryStateError("perturbation produced a dry cell")
    return OceanState(eta, hu, hv, state.t)


def adjoint_geo_balance(obs_vector, point: tuple[int, int], phys: PhysParams, coarse: CoarseGrid) -> CoarseField:
    """Transpose of the balanced-transport operator for one observed (hu, hv) pair.

    point is the coarse point (a, b) co-located with the observation.
    """
    y_hu, y_hv = float(obs_vector[0]), float(obs_vector[1])
    a, b = point
    C = phys.gb_coeff
    out = np.zeros(coarse.shape)
    ny, nx = coarse.shape
    out[(b + 1) % ny, a] += -C * y_hu / (2.0 * coarse.dy)
    out[(b - 1) % ny, a] += C * y_hu / (2.0 * coarse.dy)
    out[b, (a + 1) % nx] += C * y_hv / (2.0 * coarse.dx)
    out[b, (a - 1) % nx] += -C * y_hv / (2.0 * coarse.dx)
    return CoarseField(out, coarse)


def apply_Q_half_T(contributions, params: ErrorParams, phys: PhysParams, coarse: CoarseGrid | None = None) -> CoarseField:
    """SOAR( GB^T ( sum of observation-space vectors ) ).

    contributions: iterable of ((j, k) fine cell, (y_hu, y_hv)).  Every cell
    must be co-located with a point of `coarse` (default params.coarse).
    """
    coarse = coarse or params.coarse
    acc = CoarseField.zeros(coarse)
    for cell, y in contributions:
        acc.values += adjoint_geo_balance(y, coarse.coarse_point(*cell), phys, coarse).values
    return apply_soar(acc, params.with_coarse(coarse))


def aligned(params: ErrorParams, cell: tuple[int, int]) -> CoarseGrid:
    return align_coarse_offset(cell, params.coarse)
