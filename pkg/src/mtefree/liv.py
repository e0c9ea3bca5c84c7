"""Adapted local-IV procedure on the whole sample.

E[Y|X] = alpha0 + X'beta0 + P X'delta + q(P): pairwise differencing over
close scores recovers (beta0, delta); a local-linear fit of the remaining
residual on P gives r(p) = alpha0 + q(p) and its slope q'(p), which is
E[U1 - U0 | V = p].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from mtefree.data import Sample
from mtefree.errors import EstimationError
from mtefree.propensity import PropensityFit
from mtefree.separate import (
    default_grid,
    fill_flagged,
    local_linear,
    pairwise_normal_equations,
    solve_pairwise,
)
from mtefree.smoothing import BandwidthSpec, Kernel, as_kernel

_SINGULAR = "P·X collinear with X (insufficient propensity variation)"


def _kept_rows(s: Sample, fit: PropensityFit):
    rows = np.flatnonzero(fit.kept)
    d = s.d[rows]
    if d.sum() == 0 or d.sum() == rows.size:
        raise EstimationError("adapted LIV needs both treatment arms among kept rows", module="liv")
    return rows


def liv_pairwise(s: Sample, fit: PropensityFit, kernel=Kernel.EPANECHNIKOV, h2=None, threads=1):
    """Joint pairwise-difference estimate of ``(beta0, delta)`` over all kept pairs."""
    rows = _kept_rows(s, fit)
    p = fit.scores[rows]
    x = s.x[rows]
    z = np.hstack([x, p[:, None] * x])
    if np.ptp(p) == 0:
        raise EstimationError(_SINGULAR, module="liv")
    if h2 is None:
        h2 = float(BandwidthSpec().resolve(p)[0])
    gram, cross, off = pairwise_normal_equations(z, s.y[rows], p, kernel, h2, threads)
    if off <= 0:
        raise EstimationError("bandwidth too small: all pair weights are zero", module="liv")
    names = s.names + tuple(f"P*{nm}" for nm in s.names)
    coef = solve_pairwise(gram, cross, names, _SINGULAR, "liv")
    k = s.k
    return coef[:k], coef[k:]


def liv_local_linear(s: Sample, fit: PropensityFit, beta0, delta, p_grid, kernel=Kernel.GAUSSIAN, h3=None):
    """``(r, q_prime, flagged)`` on ``p_grid`` from whole-sample residuals."""
    rows = _kept_rows(s, fit)
    p = fit.scores[rows]
    x = s.x[rows]
    if h3 is None:
        h3 = float(BandwidthSpec("rule_of_thumb_derivative").resolve(p)[0])
    resid = s.y[rows] - x @ beta0 - p * (x @ delta)
    grid = np.asarray(p_grid, dtype=float)
    r, q1, flagged = local_linear(p, resid, grid, kernel, h3)
    return fill_flagged(grid, r, flagged), fill_flagged(grid, q1, flagged), flagged


@dataclass(eq=False)
class LivFit:
    beta0: np.ndarray
    delta: np.ndarray
    names: tuple
    p_grid: np.ndarray
    r: np.ndarray
    q1: np.ndarray
    flagged: np.ndarray
    support: tuple
    bandwidths: dict = field(default_factory=dict)
    _levels: Optional[Callable] = field(default=None, repr=False)

    def evaluate(self, p):
        """``(r, q_prime, extrapolated)`` with the nearest-grid-point rule outside support."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        lo, hi = self.p_grid[0], self.p_grid[-1]
        extrapolated = (p < lo) | (p > hi)
        q = np.clip(p, lo, hi)
        r, q1, singular = self._levels(q)
        if singular.any():
            r[singular] = np.interp(q[singular], self.p_grid, self.r)
            q1[singular] = np.interp(q[singular], self.p_grid, self.q1)
        on_grid = np.isin(q, self.p_grid)
        if on_grid.any():
            idx = np.searchsorted(self.p_grid, q[on_grid])
            r[on_grid] = self.r[idx]
            q1[on_grid] = self.q1[idx]
        return r, q1, extrapolated


def fit_liv(
    s: Sample,
    fit: PropensityFit,
    *,
    pair_kernel=Kernel.EPANECHNIKOV,
    h2=BandwidthSpec(),
    ll_kernel=Kernel.GAUSSIAN,
    h3=BandwidthSpec("rule_of_thumb_derivative"),
    grid_size: int = 101,
    threads: int = 1,
) -> LivFit:
    rows = _kept_rows(s, fit)
    p = fit.scores[rows]
    h2v = float(BandwidthSpec.parse(h2).resolve(p)[0])
    h3v = float(BandwidthSpec.parse(h3).resolve(p)[0])
    beta0, delta = liv_pairwise(s, fit, pair_kernel, h2v, threads)
    support = (float(p.min()), float(p.max()))
    grid = default_grid(*support, grid_size)
    r, q1, flagged = liv_local_linear(s, fit, beta0, delta, grid, ll_kernel, h3v)
    x = s.x[rows]
    resid = s.y[rows] - x @ beta0 - p * (x @ delta)
    ll_kernel = as_kernel(ll_kernel)
    return LivFit(
        beta0=beta0,
        delta=delta,
        names=s.names,
        p_grid=grid,
        r=r,
        q1=q1,
        flagged=flagged,
        support=support,
        bandwidths={"pairwise": h2v, "local_linear": h3v},
        _levels=lambda q: local_linear(p, resid, q, ll_kernel, h3v),
    )
