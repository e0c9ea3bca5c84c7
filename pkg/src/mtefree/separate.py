"""Second step of the separate procedure, one treatment arm at a time.

Coefficients come from a kernel-weighted pairwise-difference regression
that differences out the unknown control function; the control function
and its slope then come from a local-linear fit of the residuals on the
fitted propensity score. A parametric variant replaces both with one
global least-squares fit on a known correction basis.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from mtefree.data import Sample
from mtefree.errors import ConfigError, EstimationError
from mtefree.propensity import PropensityFit
from mtefree.smoothing import BandwidthSpec, Kernel, as_kernel, kernel_eval

logger = logging.getLogger(__name__)

PAIR_BLOCK = 512
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _pair_block(z, y, p, kernel, h, start, stop):
    radius = kernel.radius
    if np.isfinite(radius):
        lo = np.searchsorted(p, p[start] - radius * h, side="left")
        hi = np.searchsorted(p, p[stop - 1] + radius * h, side="right")
    else:
        lo, hi = 0, p.shape[0]
    w = kernel_eval(kernel, (p[start:stop, None] - p[None, lo:hi]) / h)
    rowsum = w.sum(axis=1)
    zb = z[start:stop]
    gram = (zb * rowsum[:, None]).T @ zb - zb.T @ (w @ z[lo:hi])
    cross = (zb * rowsum[:, None]).T @ y[start:stop] - zb.T @ (w @ y[lo:hi])
    return gram, cross, rowsum.sum()


def pairwise_normal_equations(z, y, p, kernel, h, threads=1):
    """Sums over pairs i<j of w_ij (z_i-z_j)(z_i-z_j)' and w_ij (z_i-z_j)(y_i-y_j).

    ``w_ij = k((p_i - p_j)/h)``. Uses the identity
    ``sum_{i<j} w_ij a_ij a_ij' = Z'(diag(W1) - W)Z`` evaluated in fixed row
    blocks, so the result does not depend on ``threads``. With a compactly
    supported kernel only pairs within ``h`` of each other are visited.

    Returns ``(gram, cross, off_diagonal_weight)``.
    """
    kernel = as_kernel(kernel)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    order = np.lexsort((np.arange(p.shape[0]), p))
    z, y, p = z[order], y[order], p[order]
    n = p.shape[0]
    starts = list(range(0, n, PAIR_BLOCK))
    job = lambda s: _pair_block(z, y, p, kernel, h, s, min(s + PAIR_BLOCK, n))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    k = z.shape[1]
    gram, cross, total = np.zeros((k, k)), np.zeros(k), 0.0
    for g, c, t in parts:
        gram += g
        cross += c
        total += t
    off = total - n * kernel_eval(kernel, 0.0)
    return 0.5 * gram, 0.5 * cross, 0.5 * off


def solve_pairwise(gram, cross, names, singular_msg, module):
    """Solve the normal equations, naming columns that cannot be separated."""
    diag = np.diag(gram).copy()
    zero = [names[i] for i in np.flatnonzero(diag <= 0)]
    if zero:
        raise EstimationError(f"{singular_msg}: no within-pair variation in {zero}", module=module)
    scale = 1.0 / np.sqrt(diag)
    g = gram * scale[:, None] * scale[None, :]
    evals, evecs = np.linalg.eigh(g)
    if evals[0] <= 1e-10 * evals[-1]:
        culprits = [names[i] for i in np.flatnonzero(np.abs(evecs[:, 0]) > 0.1)]
        raise EstimationError(f"{singular_msg}: {culprits}", module=module)
    return scale * np.linalg.solve(g, scale * cross)


def pairwise_difference_beta(
    s: Sample,
    fit: PropensityFit,
    arm: int,
    kernel=Kernel.EPANECHNIKOV,
    h2: Optional[float] = None,
    threads: int = 1,
) -> np.ndarray:
    """Kernel-weighted pairwise-difference least squares within one arm.

    Only pairs in the arm with close fitted scores get weight, so the
    control function cancels and the slope coefficients remain. No
    intercept is estimated. ``h2=None`` applies the rule of thumb to the
    arm's fitted scores.
    """
    rows = np.flatnonzero(fit.kept & (s.d == arm))
    x = s.x[rows]
    if rows.size < s.k + 1:
        raise EstimationError(
            f"arm {arm} has {rows.size} kept rows, needs at least {s.k + 1}", module="separate"
        )
    p = fit.scores[rows]
    if h2 is None:
        h2 = float(BandwidthSpec().resolve(p)[0])
    gram, cross, off = pairwise_normal_equations(x, s.y[rows], p, kernel, h2, threads)
    if off <= 0:
        raise EstimationError(
            "bandwidth too small: all pair weights are zero", module="separate",
            hint="increase the pairwise bandwidth",
        )
    return solve_pairwise(gram, cross, s.names, "collinear covariates after differencing", "separate")


def local_linear(p_obs, resid, p_grid, kernel, h):
    """Local-linear level and slope of ``resid`` against ``p_obs`` at each grid point.

    Returns ``(level, slope, singular)``; singular points are NaN.
    """
    p_obs = np.asarray(p_obs, dtype=float)
    resid = np.asarray(resid, dtype=float)
    p_grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    u = p_obs[None, :] - p_grid[:, None]
    w = kernel_eval(kernel, u / h)
    wu = w * u
    s0 = w.sum(axis=1)
    s1 = wu.sum(axis=1)
    s2 = (wu * u).sum(axis=1)
    t0 = (w * resid).sum(axis=1)
    t1 = (wu * resid).sum(axis=1)
    det = s0 * s2 - s1 * s1
    singular = ~(det > 1e-12 * np.maximum(s0 * s2, np.finfo(float).tiny)) | (s0 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        level = np.where(singular, np.nan, (s2 * t0 - s1 * t1) / det)
        slope = np.where(singular, np.nan, (s0 * t1 - s1 * t0) / det)
    return level, slope, singular


def fill_flagged(grid, values, flagged):
    """Linear interpolation over flagged points from their unflagged neighbours."""
    if not flagged.any():
        return values
    good = ~flagged
    if not good.any():
        raise EstimationError("local-linear system singular at every grid point", module="separate")
    out = values.copy()
    out[flagged] = np.interp(grid[flagged], grid[good], values[good])
    return out


def local_linear_g(
    s: Sample,
    fit: PropensityFit,
    arm: int,
    beta,
    p_grid,
    kernel=Kernel.GAUSSIAN,
    h3: Optional[float] = None,
):
    """Control function level and derivative on ``p_grid`` for one arm.

    Returns ``(g, g_prime, flagged)`` where flagged grid points had a
    singular local system and were interpolated from neighbours.
    """
    rows = np.flatnonzero(fit.kept & (s.d == arm))
    p = fit.scores[rows]
    if h3 is None:
        h3 = float(BandwidthSpec("rule_of_thumb_derivative").resolve(p)[0])
    resid = s.y[rows] - s.x[rows] @ np.asarray(beta, dtype=float)
    grid = np.asarray(p_grid, dtype=float)
    g, g1, flagged = local_linear(p, resid, grid, kernel, h3)
    if flagged.any():
        logger.warning("arm %d: %d singular grid points interpolated", arm, flagged.sum())
    return fill_flagged(grid, g, flagged), fill_flagged(grid, g1, flagged), flagged


def default_grid(lo, hi, size=101):
    if not hi > lo:
        raise EstimationError("score support has zero width", module="separate")
    return np.linspace(lo, hi, size)


@dataclass(eq=False)
class ArmFit:
    """Coefficients and control function for one arm.

    ``g`` and ``g1`` hold the control function and its derivative on
    ``p_grid``; ``evaluate`` returns both at arbitrary scores, clamping to
    the grid ends (the arm's fitted support) for the semiparametric fit.
    """

    arm: int
    beta: np.ndarray
    names: tuple
    p_grid: np.ndarray
    g: np.ndarray
    g1: np.ndarray
    flagged: np.ndarray
    support: tuple
    bandwidths: dict = field(default_factory=dict)
    theta: Optional[np.ndarray] = None
    family: str = "semiparametric"
    _levels: Optional[Callable] = field(default=None, repr=False)

    def evaluate(self, p):
        """``(g, g_prime, extrapolated)`` at scores ``p``."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if self.family != "semiparametric":
            g, g1 = self._levels(p)
            return g, g1, np.zeros(p.shape, dtype=bool)
        lo, hi = self.p_grid[0], self.p_grid[-1]
        extrapolated = (p < lo) | (p > hi)
        q = np.clip(p, lo, hi)
        g, g1, singular = self._levels(q)
        if singular.any():
            g[singular] = np.interp(q[singular], self.p_grid, self.g)
            g1[singular] = np.interp(q[singular], self.p_grid, self.g1)
        on_grid = np.isin(q, self.p_grid)
        if on_grid.any():
            idx = np.searchsorted(self.p_grid, q[on_grid])
            g[on_grid] = self.g[idx]
            g1[on_grid] = self.g1[idx]
        return g, g1, extrapolated

    def level(self, p) -> float:
        """Scalar control-function value (boundary rule applies)."""
        return float(self.evaluate(p)[0][0])

    def mean_error_given_v(self, v):
        """E[U_d | V=v] from the control function and its derivative."""
        g, g1, _ = self.evaluate(v)
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return g + v * g1 if self.arm == 1 else g - (1.0 - v) * g1


def fit_arm(
    s: Sample,
    fit: PropensityFit,
    arm: int,
    *,
    pair_kernel=Kernel.EPANECHNIKOV,
    h2=BandwidthSpec(),
    ll_kernel=Kernel.GAUSSIAN,
    h3=BandwidthSpec("rule_of_thumb_derivative"),
    grid_size: int = 101,
    threads: int = 1,
) -> ArmFit:
    """Pairwise-difference coefficients then the local-linear control function."""
    rows = np.flatnonzero(fit.kept & (s.d == arm))
    if rows.size < s.k + 2:
        raise EstimationError(f"arm {arm} has too few kept rows ({rows.size})", module="separate")
    p = fit.scores[rows]
    h2v = float(BandwidthSpec.parse(h2).resolve(p)[0])
    h3v = float(BandwidthSpec.parse(h3).resolve(p)[0])
    beta = pairwise_difference_beta(s, fit, arm, pair_kernel, h2v, threads)
    support = (float(p.min()), float(p.max()))
    grid = default_grid(*support, grid_size)
    g, g1, flagged = local_linear_g(s, fit, arm, beta, grid, ll_kernel, h3v)
    resid = s.y[rows] - s.x[rows] @ beta
    ll_kernel = as_kernel(ll_kernel)

    def levels(q):
        return local_linear(p, resid, q, ll_kernel, h3v)

    return ArmFit(
        arm=arm,
        beta=beta,
        names=s.names,
        p_grid=grid,
        g=g,
        g1=g1,
        flagged=flagged,
        support=support,
        bandwidths={"pairwise": h2v, "local_linear": h3v},
        _levels=levels,
    )


# ---------------------------------------------------------------------------
# parametric second step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricSpec:
    """E[U_d | V=v] = sum_j theta_j h_j(v), j = 0..order.

    ``normal``: h_j(v) = (Phi^{-1}(v))**j; order 1 is the normal selection
    model. ``polynomial``: h_j(v) = v**j.
    """

    family: str = "normal"
    order: int = 1

    def __post_init__(self):
        if self.family not in ("normal", "polynomial"):
            raise ConfigError(f"parametric family must be 'normal' or 'polynomial', got {self.family!r}")
        if int(self.order) < 1:
            raise ConfigError("parametric order must be >= 1")


def _normal_partial_moments(t, order):
    """M_j(t) = int_{-inf}^t z^j phi(z) dz for j = 0..order."""
    t = np.asarray(t, dtype=float)
    phi = np.exp(-0.5 * t * t) * _INV_SQRT_2PI
    finite = np.isfinite(t)
    tt = np.where(finite, t, 0.0)
    out = [ndtr(t), -phi]
    for j in range(2, order + 1):
        out.append(-np.where(finite, tt ** (j - 1) * phi, 0.0) + (j - 1) * out[j - 2])
    return out[: order + 1]


def _normal_moment(j):
    if j % 2:
        return 0.0
    return float(np.prod(np.arange(j - 1, 0, -2))) if j else 1.0


def conditional_mean_basis(family, order, arm, p):
    """Columns E[h_j(V) | V<=p] (arm 1) or E[h_j(V) | V>p] (arm 0), j = 0..order."""
    p = np.asarray(p, dtype=float)
    cols = []
    if family == "normal":
        t = ndtri(p)
        m = _normal_partial_moments(t, order)
        with np.errstate(divide="ignore", invalid="ignore"):
            for j in range(order + 1):
                if arm == 1:
                    cols.append(m[j] / p)
                else:
                    cols.append((_normal_moment(j) - m[j]) / (1.0 - p))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            for j in range(order + 1):
                if arm == 1:
                    cols.append(p**j / (j + 1))
                else:
                    cols.append((1.0 - p ** (j + 1)) / ((j + 1) * (1.0 - p)))
    return np.column_stack(cols)


def marginal_basis(family, order, v):
    """Columns h_j(v), j = 0..order."""
    v = np.asarray(v, dtype=float)
    base = ndtri(v) if family == "normal" else v
    return np.column_stack([base**j for j in range(order + 1)])


def normal_correction(p, arm, rho=1.0):
    """Closed-form first-order normal correction: E[rho*Phi^{-1}(V) | selection]."""
    p = np.asarray(p, dtype=float)
    phi = np.exp(-0.5 * ndtri(p) ** 2) * _INV_SQRT_2PI
    return -rho * phi / p if arm == 1 else rho * phi / (1.0 - p)


def _lstsq_named(design, y, names, module):
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        _, _, vt = np.linalg.svd(design / np.linalg.norm(design, axis=0), full_matrices=False)
        culprits = [names[i] for i in np.flatnonzero(np.abs(vt[-1]) > 0.1)]
        raise EstimationError(f"rank-deficient design; collinear columns: {culprits}", module=module)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def parametric_second_step(
    s: Sample,
    fit: PropensityFit,
    arm: int,
    spec: ParametricSpec = ParametricSpec(),
    grid_size: int = 101,
) -> ArmFit:
    """Least squares of Y on X and the arm's parametric correction terms.

    ``theta[0]`` is the arm intercept; ``theta[1:]`` load the correction
    basis. The returned fit evaluates g and g' in closed form at any score.
    """
    rows = np.flatnonzero(fit.kept & (s.d == arm))
    p = fit.scores[rows]
    basis = conditional_mean_basis(spec.family, spec.order, arm, p)
    design = np.hstack([basis[:, :1], s.x[rows], basis[:, 1:]])
    names = ("intercept",) + s.names + tuple(f"{spec.family}_{j}" for j in range(1, spec.order + 1))
    coef = _lstsq_named(design, s.y[rows], names, "separate")
    k = s.k
    beta = coef[1 : 1 + k]
    theta = np.concatenate([coef[:1], coef[1 + k :]])

    def levels(q):
        q = np.asarray(q, dtype=float)
        g = conditional_mean_basis(spec.family, spec.order, arm, q) @ theta
        # the slope is unbounded at q in {0, 1}; only levels are used there
        with np.errstate(divide="ignore", invalid="ignore"):
            m = marginal_basis(spec.family, spec.order, q) @ theta
            g1 = (m - g) / q if arm == 1 else (g - m) / (1.0 - q)
        return g, g1

    support = (float(p.min()), float(p.max()))
    grid = default_grid(*support, grid_size)
    g, g1 = levels(grid)
    return ArmFit(
        arm=arm,
        beta=beta,
        names=s.names,
        p_grid=grid,
        g=g,
        g1=g1,
        flagged=np.zeros(grid.shape, dtype=bool),
        support=support,
        theta=theta,
        family=spec.family,
        _levels=levels,
    )
