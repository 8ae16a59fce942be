"""Two-stage implicit equal-weights particle filter and the standard particle filter.

One assimilation cycle for particle i:

1. innovations d_m at every observed platform,
2. optimal-proposal pull psi^a = psi^f + Q H^T S d and c_i = sum d^T S d + log N_e,
3. perpendicular random pair (xi, nu) with scaled norms (gamma, zeta),
4. ensemble barrier: w_target = mean(c), beta = min((w_target - c)/zeta + 1),
5. c*_i = w_target - c_i - (beta - 1) zeta_i and alpha_i from Lambert W,
6. psi = psi^a + P^{1/2}(beta^{1/2} nu + alpha^{1/2} xi).

Stages 1-3 and 5-6 are independent per particle; stage 4 is a deterministic
reduction in particle order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model_error as me
from .alpha import solve_alpha
from .grid import CoarseGrid, ModelGrid, OceanState, PhysParams, align_coarse_offset, locate_cell
from .observations import ObservationRecord, ObsErrorParams, innovation

BLOCK_RADIUS = 3
BLOCK_SIDE = 2 * BLOCK_RADIUS + 1
UNIT_OBS = (np.array([1.0, 0.0]), np.array([0.0, 1.0]))


class FilterError(RuntimeError):
    pass


class EnsembleCollapseError(FilterError):
    pass


# ----------------------------------------------------------------------------- precomputation


def _reference_cell(coarse: CoarseGrid) -> tuple[int, int]:
    return coarse.fine_cell(coarse.nx // 2, coarse.ny // 2)


def hqht(params: me.ErrorParams, phys: PhysParams) -> np.ndarray:
    """H Q H^T for one observed cell, built column by column from unit observation vectors.

    The operator chain is translation invariant on the periodic grid once the
    coarse grid is aligned, so one reference cell serves every platform.
    """
    coarse = params.coarse
    cell = _reference_cell(coarse)
    j, k = cell
    out = np.empty((2, 2))
    for col, e in enumerate(UNIT_OBS):
        v = me.apply_Q_half_T([(cell, e)], params, phys, coarse)
        _, dhu, dhv = me.apply_Q_half(v, params, phys)
        out[:, col] = dhu[k, j], dhv[k, j]
    return out


def precompute_S(params: me.ErrorParams, phys: PhysParams, obs_err: ObsErrorParams = ObsErrorParams()) -> np.ndarray:
    """S = (H Q H^T + R)^{-1}."""
    A = hqht(params, phys) + obs_err.R
    # the approximate adjoint makes the product symmetric only to round-off
    # when the coarse and model grids differ; symmetrize before inverting
    A = 0.5 * (A + A.T)
    if abs(np.linalg.det(A)) < 1e-300:
        raise FilterError("H Q H^T + R is singular")
    S = np.linalg.inv(A)
    return 0.5 * (S + S.T)


def _block_index(coarse: CoarseGrid, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    off = np.arange(-BLOCK_RADIUS, BLOCK_RADIUS + 1)
    return (b + off) % coarse.ny, (a + off) % coarse.nx


def local_block(S: np.ndarray, params: me.ErrorParams, phys: PhysParams) -> np.ndarray:
    """The 49x49 matrix I - Q_SOAR GB^T H^T S H GB Q_SOAR on the 7x7 coarse block.

    Block entries are ordered row by row, x fastest.
    """
    coarse = params.coarse
    if coarse.nx < BLOCK_SIDE or coarse.ny < BLOCK_SIDE:
        raise FilterError(f"coarse grid {coarse.shape} smaller than the {BLOCK_SIDE}x{BLOCK_SIDE} block")
    cell = _reference_cell(coarse)
    a, b = coarse.coarse_point(*cell)
    rows, cols = _block_index(coarse, a, b)
    Z = np.empty((BLOCK_SIDE * BLOCK_SIDE, 2))
    for col, e in enumerate(UNIT_OBS):
        v = me.apply_Q_half_T([(cell, e)], params, phys, coarse).values
        Z[:, col] = v[np.ix_(rows, cols)].ravel()
    M = Z @ S @ Z.T
    return np.eye(BLOCK_SIDE * BLOCK_SIDE) - 0.5 * (M + M.T)


def local_block_pattern(params: me.ErrorParams, phys: PhysParams) -> np.ndarray:
    """Structural non-zero pattern of the non-identity part of the 49x49 block.

    The chain is evaluated with absolute values so that no entry vanishes by
    cancellation; the antisymmetric dipoles make the numerical center row
    exactly zero while it still lies inside the operator footprint.
    """
    coarse = params.coarse
    cell = _reference_cell(coarse)
    a, b = coarse.coarse_point(*cell)
    rows, cols = _block_index(coarse, a, b)
    Z = np.empty((BLOCK_SIDE * BLOCK_SIDE, 2))
    for col, e in enumerate(UNIT_OBS):
        gbt = np.abs(me.adjoint_geo_balance(e, (a, b), phys, coarse).values)
        v = me.apply_soar(me.CoarseField(gbt, coarse), params.with_coarse(coarse)).values
        Z[:, col] = v[np.ix_(rows, cols)].ravel()
    return (Z @ np.ones((2, 2)) @ Z.T) > 0


@dataclass(frozen=True)
class LocalSVDBlock:
    factor: np.ndarray  # U Sigma^{1/2}
    singular_values: np.ndarray
    block: np.ndarray

    @property
    def n_nonidentity_rows(self) -> int:
        eye = np.eye(self.block.shape[0])
        return int(np.count_nonzero(np.any(self.block != eye, axis=1)))


def precompute_local_svd(S: np.ndarray, params: me.ErrorParams, phys: PhysParams) -> LocalSVDBlock:
    B = local_block(S, params, phys)
    try:
        U, sig, Vt = np.linalg.svd(B)
    except np.linalg.LinAlgError as exc:
        raise FilterError(f"SVD of the local block failed: {exc}") from exc
    # for a symmetric PSD block the left and right singular vectors coincide;
    # a sign flip flags a negative eigenvalue
    flips = np.einsum("ij,ji->i", Vt, U) < 0
    if np.any(flips & (sig > 1e-10 * sig.max())):
        warnings.warn("local block is not positive semi-definite; negative directions dropped", RuntimeWarning)
        sig = np.where(flips, 0.0, sig)
    return LocalSVDBlock(U * np.sqrt(sig), sig, B)


@dataclass(frozen=True)
class FilterOperators:
    """Immutable data shared by all particles."""

    grid: ModelGrid
    phys: PhysParams
    error: me.ErrorParams
    obs_error: ObsErrorParams
    S: np.ndarray
    svd: LocalSVDBlock

    @classmethod
    def build(cls, grid: ModelGrid, phys: PhysParams, error: me.ErrorParams, obs_error: ObsErrorParams = ObsErrorParams()):
        S = precompute_S(error, phys, obs_error)
        return cls(grid, phys, error, obs_error, S, precompute_local_svd(S, error, phys))

    @property
    def n_state(self) -> int:
        return self.grid.n_state

    @property
    def n_random(self) -> int:
        return self.error.coarse.n_points


# ----------------------------------------------------------------------------- per-particle stages


def platform_cells(obs: list[ObservationRecord], grid: ModelGrid) -> list[tuple[int, int]]:
    return [locate_cell(r.x, r.y, grid) for r in obs]


def innovations(state: OceanState, obs: list[ObservationRecord], ops: FilterOperators) -> np.ndarray:
    if not obs:
        return np.zeros((0, 2))
    return np.array([innovation(state, r, ops.phys, ops.grid) for r in obs])


def pull_increment(cells, vectors, ops: FilterOperators) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Q H^T applied platform by platform to the given observation-space vectors.

    Platforms sharing a coarse-grid alignment are pushed through the linear
    chain together, which is identical to adding their individual pulls.
    """
    groups: dict[CoarseGrid, list] = {}
    for cell, y in zip(cells, vectors):
        c = align_coarse_offset(cell, ops.error.coarse)
        groups.setdefault(c, []).append((cell, y))
    if not groups:
        return None
    total = None
    for coarse, contribs in sorted(groups.items(), key=lambda kv: (kv[0].offset_k, kv[0].offset_j)):
        v = me.apply_Q_half_T(contribs, ops.error, ops.phys, coarse)
        inc = me.apply_Q_half(v, ops.error, ops.phys)
        total = inc if total is None else tuple(a + b for a, b in zip(total, inc))
    return total


def optimal_proposal_pull(
    state: OceanState, obs: list[ObservationRecord], ops: FilterOperators
) -> tuple[OceanState, float]:
    """Pull the particle towards the observations; returns (psi^a, sum_d d^T S d)."""
    d = innovations(state, obs, ops)
    if d.shape[0] == 0:
        return state.copy(), 0.0
    Sd = d @ ops.S  # S is symmetric
    phi = float(np.einsum("ij,ij->", d, Sd))
    inc = pull_increment(platform_cells(obs, ops.grid), Sd, ops)
    return me.add_increment(state, inc, ops.phys), phi


@dataclass
class PerpPair:
    xi: me.CoarseField
    nu: me.CoarseField
    gamma: float
    zeta: float


def sample_perp_pair(rng: np.random.Generator, coarse: CoarseGrid, n_state: int) -> PerpPair:
    """Independent xi, nu~ ~ N(0, I); nu is nu~ minus its xi component, rescaled to |nu~|."""
    scale = n_state / coarse.n_points
    while True:
        xi = rng.standard_normal(coarse.shape)
        nt = rng.standard_normal(coarse.shape)
        xx = float(np.dot(xi.ravel(), xi.ravel()))
        if xx > 0:
            break
    nn = float(np.dot(nt.ravel(), nt.ravel()))
    nx_ = float(np.dot(nt.ravel(), xi.ravel()))
    a = nx_ / xx
    perp = nt - a * xi
    pp = nn - a * nx_
    nu = nt if a == 0 else perp * math.sqrt(nn / pp)
    return PerpPair(me.CoarseField(xi, coarse), me.CoarseField(nu, coarse), xx * scale, nn * scale)


@dataclass(frozen=True)
class FilterSyncResult:
    w_target: float
    beta: float


def sync_target_beta(c, zeta, mode: str = "two-stage") -> FilterSyncResult:
    c = [float(v) for v in c]
    zeta = [float(v) for v in zeta]
    if len(c) < 2 or len(c) != len(zeta):
        raise FilterError("the barrier needs matching c and zeta from at least two particles")
    if mode == "one-stage":
        return FilterSyncResult(max(c), 0.0)
    if any(z <= 0 for z in zeta):
        raise FilterError("zeta must be positive")
    w = math.fsum(c) / len(c)
    beta = min((w - ci) / zi + 1.0 for ci, zi in zip(c, zeta))
    if beta < 0:
        warnings.warn(f"beta = {beta:.3g} < 0 clamped to zero", RuntimeWarning)
        beta = 0.0
    return FilterSyncResult(w, beta)


def c_star(c_i: float, zeta_i: float, sync: FilterSyncResult, mode: str = "two-stage") -> float:
    if mode == "one-stage":
        return sync.w_target - c_i
    return sync.w_target - c_i - (sync.beta - 1.0) * zeta_i


def apply_P_half(noise: me.CoarseField, cells, svd: LocalSVDBlock, params: me.ErrorParams, phys: PhysParams):
    """P^{1/2} noise: local 7x7 factors around each platform, then the Q^{1/2} chain."""
    if noise.coarse.shape != params.coarse.shape:
        raise ValueError("noise lives on a different coarse grid")
    vals = noise.values.copy()
    for cell in cells:
        a, b = params.coarse.nearest_point(*cell)
        rows, cols = _block_index(params.coarse, a, b)
        ix = np.ix_(rows, cols)
        vals[ix] = (svd.factor @ vals[ix].ravel()).reshape(BLOCK_SIDE, BLOCK_SIDE)
    return me.apply_Q_half(me.CoarseField(vals, params.coarse), params, phys)


@dataclass
class ParticleDiagnostics:
    c: float
    phi: float
    gamma: float
    zeta: float
    alpha: float = float("nan")
    c_star: float = float("nan")
    log_weight: float = float("nan")


@dataclass
class PreparedParticle:
    """Output of the stages before the ensemble barrier."""

    analysis: OceanState
    pair: PerpPair
    diag: ParticleDiagnostics


def stage_prepare(
    state: OceanState, obs: list[ObservationRecord], ops: FilterOperators, rng: np.random.Generator, n_e: int
) -> PreparedParticle:
    analysis, phi = optimal_proposal_pull(state, obs, ops)
    pair = sample_perp_pair(rng, ops.error.coarse, ops.n_state)
    c = phi + math.log(n_e)
    return PreparedParticle(analysis, pair, ParticleDiagnostics(c, phi, pair.gamma, pair.zeta))


def recomputed_log_weight(diag: ParticleDiagnostics, beta: float, n_state: int, mode: str = "two-stage") -> float:
    """-log w from the implicit equation with the cross term dropped (high-dimensional form)."""
    a = diag.alpha
    val = (a - 1.0) * diag.gamma - n_state * math.log(a) + diag.c
    if mode != "one-stage":
        val += (beta - 1.0) * diag.zeta
    return -val


def stage_finish(
    prep: PreparedParticle, obs: list[ObservationRecord], ops: FilterOperators, sync: FilterSyncResult,
    mode: str = "two-stage",
) -> OceanState:
    d = prep.diag
    d.c_star = c_star(d.c, d.zeta, sync, mode)
    d.alpha = solve_alpha(d.c_star, d.gamma, ops.n_state)
    d.log_weight = recomputed_log_weight(d, sync.beta, ops.n_state, mode)
    if mode == "one-stage":
        noise = math.sqrt(d.alpha) * prep.pair.xi.values
    else:
        noise = math.sqrt(sync.beta) * prep.pair.nu.values + math.sqrt(d.alpha) * prep.pair.xi.values
    cells = platform_cells(sorted(obs, key=lambda r: r.key), ops.grid)
    inc = apply_P_half(me.CoarseField(noise, ops.error.coarse), cells, ops.svd, ops.error, ops.phys)
    return me.add_increment(prep.analysis, inc, ops.phys)


@dataclass
class CycleResult:
    states: list[OceanState]
    diagnostics: list[ParticleDiagnostics]
    sync: FilterSyncResult
    log: list[str] = field(default_factory=list)


def _map(fn, items, pool):
    return list(pool.map(fn, items)) if pool is not None else [fn(x) for x in items]


def iewpf_assimilate(
    states: list[OceanState], obs: list[ObservationRecord], ops: FilterOperators, rngs: list[np.random.Generator],
    mode: str = "two-stage", pool=None, cycle: int = 0,
) -> CycleResult:
    """One IEWPF cycle; `pool` is an optional executor with a map method."""
    if mode not in ("two-stage", "one-stage"):
        raise ValueError(f"unknown filter mode '{mode}'")
    n_e = len(states)
    if n_e < 2 or len(rngs) != n_e:
        raise FilterError("need at least two particles, each with its own stream")
    obs = sorted(obs, key=lambda r: r.key)

    def prep(i):
        try:
            return stage_prepare(states[i], obs, ops, rngs[i], n_e)
        except Exception as exc:
            raise FilterError(f"particle {i}: {exc}") from exc

    preps = _map(prep, range(n_e), pool)
    sync = sync_target_beta([p.diag.c for p in preps], [p.diag.zeta for p in preps], mode)

    def finish(i):
        try:
            return stage_finish(preps[i], obs, ops, sync, mode)
        except Exception as exc:
            raise FilterError(f"particle {i}: {exc}") from exc

    post = _map(finish, range(n_e), pool)
    diags = [p.diag for p in preps]
    log = [
        f"{cycle},{i},{d.c!r},{d.gamma!r},{d.zeta!r},{d.alpha!r},{sync.beta!r},{sync.w_target!r}"
        for i, d in enumerate(diags)
    ]
    return CycleResult(post, diags, sync, log)


# ----------------------------------------------------------------------------- standard particle filter


def log_likelihoods(states: list[OceanState], obs: list[ObservationRecord], ops_or_phys, grid: ModelGrid | None = None,
                    obs_err: ObsErrorParams = ObsErrorParams()) -> np.ndarray:
    """-1/2 sum_m d_m^T R^{-1} d_m per particle with eta-compensated innovations."""
    phys = ops_or_phys.phys if isinstance(ops_or_phys, FilterOperators) else ops_or_phys
    grid = ops_or_phys.grid if isinstance(ops_or_phys, FilterOperators) else grid
    rinv = 1.0 / np.array([obs_err.r_hu, obs_err.r_hv])
    out = np.zeros(len(states))
    for i, s in enumerate(states):
        for r in obs:
            d = innovation(s, r, phys, grid)
            out[i] -= 0.5 * float(np.dot(d * rinv, d))
    return out


def normalize_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=np.float64)
    m = np.max(logw)
    if not np.isfinite(m):
        raise EnsembleCollapseError(f"ensemble collapse: max log-weight {m}")
    w = np.exp(logw - m)
    s = w.sum()
    if not s > 0:
        raise EnsembleCollapseError(f"ensemble collapse: max log-weight {m}")
    return w / s


def standard_pf_weights(states, obs, phys: PhysParams, grid: ModelGrid, obs_err: ObsErrorParams = ObsErrorParams()):
    return normalize_log_weights(log_likelihoods(states, obs, phys, grid, obs_err))


def residual_resample(weights, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    n = w.size
    scaled = n * w
    counts = np.floor(scaled + 1e-12).astype(np.int64)
    counts = np.minimum(counts, n)
    rem = n - int(counts.sum())
    if rem > 0:
        resid = np.clip(scaled - counts, 0.0, None)
        if resid.sum() <= 0:
            resid = np.ones(n)
        counts += rng.multinomial(rem, resid / resid.sum())
    elif rem < 0:
        raise ValueError("weights do not sum to one")
    return np.repeat(np.arange(n), counts)
