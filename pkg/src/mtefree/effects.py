"""MTE curves, summary causal parameters and marginal structural/response curves."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mtefree.errors import EstimationError


@dataclass(eq=False)
class MteCurve:
    v: np.ndarray
    values: np.ndarray
    profile: np.ndarray
    flagged: np.ndarray = None

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.zeros(self.v.shape, dtype=bool)


@dataclass
class CausalSummary:
    ate: float
    tt: float
    tut: float
    late: float
    pi_x: float
    v1: float
    v2: float
    profile: np.ndarray = field(repr=False, default=None)
    extrapolated: bool = False

    def as_dict(self):
        return {
            "ATE": self.ate,
            "TT": self.tt,
            "TUT": self.tut,
            "LATE": self.late,
            "pi_x": self.pi_x,
            "late_window": [self.v1, self.v2],
            "extrapolated_boundary": bool(self.extrapolated),
        }


def _check_grid(v, *arrays):
    v = np.asarray(v, dtype=float)
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.shape != v.shape:
            raise EstimationError(f"grid mismatch: {a.shape} vs {v.shape}", module="effects")
        out.append(a)
    return v, out


def assemble_mte(beta0, beta1, g0, g0_prime, g1, g1_prime, x, v) -> MteCurve:
    """x'(b1-b0) + [g1(v) - g0(v)] + v g1'(v) + (1-v) g0'(v) on the grid ``v``."""
    v, (g0, g0_prime, g1, g1_prime) = _check_grid(v, g0, g0_prime, g1, g1_prime)
    x = np.asarray(x, dtype=float)
    shift = float(x @ (np.asarray(beta1) - np.asarray(beta0)))
    values = shift + (g1 - g0) + v * g1_prime + (1.0 - v) * g0_prime
    return MteCurve(v, values, x)


def _check_window(pi_x, v1, v2):
    if not 0.0 < pi_x < 1.0:
        raise EstimationError(f"score at the profile must lie in (0, 1), got {pi_x}", module="effects")
    if not (0.0 <= v1 < v2 <= 1.0):
        raise EstimationError(f"LATE window needs 0 <= v1 < v2 <= 1, got ({v1}, {v2})", module="effects")


def causal_params(beta0, beta1, g0: Callable, g1: Callable, pi_x, x, v1=0.25, v2=0.75,
                  extrapolated=False) -> CausalSummary:
    """ATE, TT, TUT and LATE from coefficients and control-function evaluators.

    ``g0`` and ``g1`` map a score to the control-function level.
    """
    pi_x = float(pi_x)
    _check_window(pi_x, v1, v2)
    x = np.asarray(x, dtype=float)
    shift = float(x @ (np.asarray(beta1) - np.asarray(beta0)))
    g1_one, g0_zero = g1(1.0), g0(0.0)
    g1_pi, g0_pi = g1(pi_x), g0(pi_x)
    ate = shift + g1_one - g0_zero
    tt = shift + g1_pi + ((1.0 - pi_x) * g0_pi - g0_zero) / pi_x
    tut = shift + (g1_one - pi_x * g1_pi) / (1.0 - pi_x) - g0_pi
    late = shift + (
        v2 * g1(v2) - v1 * g1(v1) + (1.0 - v2) * g0(v2) - (1.0 - v1) * g0(v1)
    ) / (v2 - v1)
    return CausalSummary(ate, tt, tut, late, pi_x, v1, v2, x, extrapolated)


def liv_mte(delta, q_prime, x, v) -> MteCurve:
    v, (q_prime,) = _check_grid(v, q_prime)
    x = np.asarray(x, dtype=float)
    return MteCurve(v, float(x @ np.asarray(delta)) + q_prime, x)


def liv_causal_params(delta, r: Callable, pi_x, x, v1=0.25, v2=0.75, extrapolated=False) -> CausalSummary:
    """Causal parameters from the adapted-LIV level function r = alpha0 + q."""
    pi_x = float(pi_x)
    _check_window(pi_x, v1, v2)
    x = np.asarray(x, dtype=float)
    shift = float(x @ np.asarray(delta))
    r0, r1, rpi = r(0.0), r(1.0), r(pi_x)
    return CausalSummary(
        ate=shift + r1 - r0,
        tt=shift + (rpi - r0) / pi_x,
        tut=shift + (r1 - rpi) / (1.0 - pi_x),
        late=shift + (r(v2) - r(v1)) / (v2 - v1),
        pi_x=pi_x,
        v1=v1,
        v2=v2,
        profile=x,
        extrapolated=extrapolated,
    )


def marginal_structural(beta_d, mean_error_d, mean_x):
    """E[Y_d | V=v] = E[X]'beta_d + E[U_d | V=v] over a grid of v."""
    return float(np.asarray(mean_x) @ np.asarray(beta_d)) + np.asarray(mean_error_d, dtype=float)


def marginal_response(scores, x, v, mean_error0, mean_error1, beta0, beta1):
    """``(E[D|V=v], E[Y|V=v])`` on the grid ``v``.

    ``scores`` and ``x`` are the fitted scores and covariates of the rows
    used in estimation.
    """
    scores = np.asarray(scores, dtype=float)
    x = np.asarray(x, dtype=float)
    v, (mean_error0, mean_error1) = _check_grid(v, mean_error0, mean_error1)
    above = scores[None, :] >= v[:, None]
    prob = above.mean(axis=1)
    treated_x = above.astype(float) @ x / scores.shape[0]
    delta = np.asarray(beta1) - np.asarray(beta0)
    y0 = marginal_structural(beta0, mean_error0, x.mean(axis=0))
    mean_y = y0 + treated_x @ delta + prob * (mean_error1 - mean_error0)
    return prob, mean_y


def trapezoid_average(v, values, lo, hi):
    """Trapezoid average of a gridded curve over [lo, hi], ends held flat."""
    v = np.asarray(v, dtype=float)
    values = np.asarray(values, dtype=float)
    pts = np.concatenate([[lo], v[(v > lo) & (v < hi)], [hi]])
    vals = np.interp(pts, v, values)
    return float(np.trapezoid(vals, pts) / (hi - lo))
