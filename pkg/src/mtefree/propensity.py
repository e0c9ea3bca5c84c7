"""First-step kernel propensity score and common-support trimming."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from mtefree.data import Sample, split_cells
from mtefree.errors import EstimationError
from mtefree.smoothing import BandwidthSpec, Kernel, as_kernel, kernel_eval

logger = logging.getLogger(__name__)

_BLOCK = 1024


def _product_weights(kernel, x_eval, x_obs, h):
    """Product-kernel weights, shape (len(x_eval), len(x_obs))."""
    w = np.ones((x_eval.shape[0], x_obs.shape[0]))
    for l in range(x_obs.shape[1]):
        w *= kernel_eval(kernel, (x_obs[None, :, l] - x_eval[:, None, l]) / h[l])
    return w


def _nw(kernel, h, x_eval, x_obs, d_obs, self_rows=None):
    """Nadaraya-Watson mean of ``d_obs`` at ``x_eval``.

    ``self_rows[i]`` is the position of evaluation point i inside ``x_obs``
    whose own weight is removed (leave-one-out); ``None`` keeps it.
    """
    out = np.empty(x_eval.shape[0])
    for start in range(0, x_eval.shape[0], _BLOCK):
        stop = min(start + _BLOCK, x_eval.shape[0])
        w = _product_weights(kernel, x_eval[start:stop], x_obs, h)
        if self_rows is not None:
            w[np.arange(stop - start), self_rows[start:stop]] = 0.0
        mass = w.sum(axis=1)
        if np.any(mass <= 0):
            raise EstimationError(
                "no local data: zero kernel mass at an evaluation point",
                module="propensity",
                hint="increase the propensity bandwidth or use the gaussian kernel",
            )
        # row-wise reductions keep each score independent of the block layout
        out[start:stop] = (w * d_obs).sum(axis=1) / mass
    return np.clip(out, 0.0, 1.0)


@dataclass(eq=False)
class PropensityFit:
    """Fitted scores, the score function and the trimmed support.

    Rows belonging to cells smaller than ``min_cell_size`` get a NaN score
    and ``kept = False``.
    """

    scores: np.ndarray
    kept: np.ndarray
    support: tuple
    bandwidths: np.ndarray
    kernel: Kernel
    leave_one_out: bool = False
    dropped_cells: list = field(default_factory=list)
    trim_counts: tuple = (0, 0)
    _x_cont: Optional[np.ndarray] = field(default=None, repr=False)
    _x_disc: Optional[np.ndarray] = field(default=None, repr=False)
    _d: Optional[np.ndarray] = field(default=None, repr=False)
    _func: Optional[Callable] = field(default=None, repr=False)

    @property
    def fitted(self) -> np.ndarray:
        """Rows with a score (cell large enough)."""
        return np.isfinite(self.scores)

    def evaluate(self, x_cont, x_disc=None) -> np.ndarray:
        """Score function at arbitrary covariate values (leave-one-in)."""
        x_cont = np.atleast_2d(np.asarray(x_cont, dtype=float))
        m = x_cont.shape[0]
        if x_disc is None:
            x_disc = np.empty((m, 0), dtype=np.int64)
        x_disc = np.asarray(x_disc).reshape(m, -1)
        if self._func is not None:
            return np.asarray(self._func(x_cont, x_disc), dtype=float)
        if x_cont.shape[1] == 0 and self._x_cont.shape[1] == 0:
            x_cont = np.empty((m, 0))
        out = np.empty(m)
        keys = [tuple(int(v) for v in row) for row in x_disc]
        for key in set(keys):
            idx = np.array([i for i, k in enumerate(keys) if k == key])
            rows = np.flatnonzero(np.all(self._x_disc == np.array(key, dtype=np.int64), axis=1))
            if key in self.dropped_cells or rows.size == 0:
                raise EstimationError(
                    f"empty cell at evaluation point (discrete key {key})", module="propensity"
                )
            out[idx] = _nw(self.kernel, self.bandwidths, x_cont[idx], self._x_cont[rows], self._d[rows])
        return out

    def histogram(self, d, bins=20):
        """Counts of fitted scores by treatment status on ``bins`` equal bins of [0, 1].

        Returns ``(edges, count_treated, count_untreated)``.
        """
        edges = np.linspace(0.0, 1.0, bins + 1)
        ok = self.fitted
        s, dd = self.scores[ok], np.asarray(d)[ok]
        c1, _ = np.histogram(s[dd == 1], bins=edges)
        c0, _ = np.histogram(s[dd == 0], bins=edges)
        return edges, c1, c0


def fit_propensity(
    s: Sample,
    kernel=Kernel.GAUSSIAN,
    bandwidth=BandwidthSpec("rule_of_thumb_undersmoothed"),
    *,
    leave_one_out: bool = False,
    min_cell_size: int = 10,
) -> PropensityFit:
    """Kernel regression of D on the continuous covariates within each discrete cell.

    Bandwidths are resolved once on the whole-sample continuous columns.
    The default keeps each observation in its own fitted score.
    """
    kernel = as_kernel(kernel)
    bandwidth = BandwidthSpec.parse(bandwidth)
    kc = s.x_cont.shape[1]
    h = bandwidth.resolve(s.x_cont) if kc else np.empty(0)
    d = s.d.astype(float)
    scores = np.full(s.n, np.nan)
    dropped = []
    for cell in split_cells(s):
        if cell.size < max(min_cell_size, 2):
            logger.warning("cell %s has %d rows (< %d); dropped", cell.key, cell.size, min_cell_size)
            dropped.append(cell.key)
            continue
        xc = s.x_cont[cell.rows]
        self_rows = np.arange(cell.size) if leave_one_out else None
        scores[cell.rows] = _nw(kernel, h, xc, xc, d[cell.rows], self_rows)
    fitted = np.isfinite(scores)
    if not fitted.any():
        raise EstimationError("every cell is below the minimum size", module="propensity")
    lo, hi = float(scores[fitted].min()), float(scores[fitted].max())
    return PropensityFit(
        scores=scores,
        kept=fitted.copy(),
        support=(lo, hi),
        bandwidths=h,
        kernel=kernel,
        leave_one_out=leave_one_out,
        dropped_cells=dropped,
        _x_cont=s.x_cont,
        _x_disc=s.x_disc,
        _d=d,
    )


def fit_from_function(s: Sample, func: Callable) -> PropensityFit:
    """Wrap a known score function ``func(x_cont, x_disc)`` as a fit (noiseless oracle)."""
    scores = np.asarray(func(s.x_cont, s.x_disc), dtype=float)
    return PropensityFit(
        scores=scores,
        kept=np.ones(s.n, dtype=bool),
        support=(float(scores.min()), float(scores.max())),
        bandwidths=np.empty(0),
        kernel=Kernel.GAUSSIAN,
        _x_cont=s.x_cont,
        _x_disc=s.x_disc,
        _d=s.d.astype(float),
        _func=func,
    )


def _tail_count(frac, m):
    return int(math.ceil(frac * m - 1e-9))


def trim(fit: PropensityFit, lower_pct: float = 0.01, upper_pct: float = 0.01) -> PropensityFit:
    """Drop the smallest ``lower_pct`` and largest ``upper_pct`` share of fitted scores.

    Ties are broken by (score, row index). Trimming is global, not per arm.
    """
    if not (0 <= lower_pct < 0.5 and 0 <= upper_pct < 0.5):
        raise EstimationError("trim fractions must lie in [0, 0.5)", module="propensity")
    valid = np.flatnonzero(fit.fitted)
    m = valid.size
    order = valid[np.lexsort((valid, fit.scores[valid]))]
    n_lo, n_hi = _tail_count(lower_pct, m), _tail_count(upper_pct, m)
    if n_lo + n_hi >= m:
        raise EstimationError("trimming removes every observation", module="propensity")
    kept = np.zeros_like(fit.kept)
    kept[order[n_lo : m - n_hi]] = True
    d = fit._d
    if d is not None and (d[kept].sum() == 0 or d[kept].sum() == kept.sum()):
        raise EstimationError("trimming empties a treatment arm", module="propensity")
    s = fit.scores[kept]
    return replace(
        fit,
        kept=kept,
        support=(float(s.min()), float(s.max())),
        trim_counts=(n_lo, n_hi),
    )
