"""Scalar solves for the IEWPF scaling factor alpha.

The filter uses the high-dimensional closed form

    alpha = -(N / gamma) * W0( -(gamma / N) * exp(-gamma / N) * exp(-c_star / N) ),

which solves (alpha - 1) * gamma - N * log(alpha) = c_star.  The
incomplete-gamma equation

    P(N/2, alpha * gamma / 2) = exp(-c_star / 2) * P(N/2, gamma / 2)

is solved by a safeguarded Newton iteration and kept as an independent
validation route for moderate N.
"""

from __future__ import annotations

import math
import warnings

from scipy.special import gammainc, gammaln

INV_E = math.exp(-1.0)
BRANCH_TOL = 1e-9
W_TOL = 1e-12


class LambertWError(ArithmeticError):
    pass


class BranchPointClamp(RuntimeWarning):
    pass


def _branch_series(p: float) -> float:
    # expansion of W0 around z = -1/e in p = sqrt(2 (e z + 1))
    return -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (-43.0 / 540.0 + p * 769.0 / 17280.0))))


def lambert_w0(z: float, tol: float = W_TOL, max_iter: int = 100) -> float:
    """Principal branch of the Lambert W function for real z >= -1/e."""
    z = float(z)
    if math.isnan(z):
        raise LambertWError("W0 of NaN")
    if z == 0.0:
        return 0.0
    ez1 = math.e * z + 1.0
    if ez1 <= 0.0:
        if z < -INV_E - BRANCH_TOL:
            warnings.warn(f"Lambert W argument {z!r} below -1/e; clamped to the branch point", BranchPointClamp)
        return -1.0
    p = math.sqrt(2.0 * ez1)
    if p < 1e-3:
        return _branch_series(p)
    if z < -0.25:
        w = _branch_series(p)
    elif z < 3.0:
        w = math.log1p(z)
    else:
        L1 = math.log(z)
        L2 = math.log(L1)
        w = L1 - L2 + L2 / L1
    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= tol * (1.0 + abs(w)):
            return w
    raise LambertWError(f"Halley iteration for W0({z!r}) did not converge")


def solve_alpha(c_star: float, gamma: float, n_state: int) -> float:
    """alpha in (0, 1] from the Lambert-W closed form."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if c_star < 0:
        if c_star < -1e-9 * max(1.0, abs(gamma)):
            warnings.warn(f"negative c_star {c_star!r}; clamped to zero", BranchPointClamp)
        c_star = 0.0
    N = float(n_state)
    r = gamma / N
    z = -r * math.exp(-r - c_star / N)
    alpha = -lambert_w0(z) / r
    # with gamma < N and c_star = 0 the exact root is 1; rounding may overshoot
    return min(alpha, 1.0)


def alpha_residual(alpha: float, c_star: float, gamma: float, n_state: int) -> float:
    """(alpha - 1) * gamma - N * log(alpha) - c_star."""
    return (alpha - 1.0) * gamma - n_state * math.log(alpha) - c_star


def _log_p(s: float, x: float) -> float:
    v = gammainc(s, x)
    if v > 0:
        return math.log(v)
    # deep lower tail: P(s, x) ~ x^s e^-x / Gamma(s + 1)
    return s * math.log(x) - x - gammaln(s + 1.0)


def solve_alpha_gamma(c_star: float, gamma: float, n_state: int, tol: float = 1e-13, max_iter: int = 200) -> float:
    """alpha from the incomplete-gamma equation by Newton's method with bisection safeguard."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if c_star < 0:
        raise ValueError("c_star must be non-negative")
    s = 0.5 * n_state
    target = -0.5 * c_star + _log_p(s, 0.5 * gamma)
    if c_star == 0:
        return 1.0

    def F(a):
        return _log_p(s, 0.5 * a * gamma) - target

    def dF(a):
        x = 0.5 * a * gamma
        return 0.5 * gamma * math.exp((s - 1.0) * math.log(x) - x - gammaln(s) - _log_p(s, x))

    lo, hi = 0.0, 1.0
    a = 1.0
    for _ in range(max_iter):
        fa = F(a)
        if fa > 0:
            hi = a
        else:
            lo = a
        a_new = a - fa / dF(a)
        if not (lo < a_new < hi):
            a_new = 0.5 * (lo + hi)
        if abs(a_new - a) <= tol * a_new:
            return a_new
        a = a_new
    raise ArithmeticError("incomplete-gamma Newton iteration did not converge")
