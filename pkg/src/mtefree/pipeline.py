"""End-to-end estimation: propensity, trimming, second step, effects."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mtefree.data import Sample
from mtefree.effects import (
    CausalSummary,
    MteCurve,
    assemble_mte,
    causal_params,
    liv_causal_params,
    liv_mte,
    marginal_response,
    marginal_structural,
)
from mtefree.errors import ConfigError, EstimationError
from mtefree.liv import LivFit, fit_liv
from mtefree.propensity import PropensityFit, fit_propensity, trim
from mtefree.separate import ArmFit, ParametricSpec, fit_arm, parametric_second_step
from mtefree.smoothing import BandwidthSpec, Kernel, as_kernel

logger = logging.getLogger(__name__)

PROCEDURES = ("separate", "liv", "both")
SECOND_STEPS = ("semiparametric", "normal", "polynomial")


@dataclass
class EstimationConfig:
    """Tuning for one estimation run.

    Kernels and bandwidths are set per step: ``propensity`` (first step),
    ``pairwise`` (coefficients) and ``local_linear`` (control function).
    ``profile`` maps covariate names to evaluation values; unnamed
    covariates sit at their sample means.
    """

    procedure: str = "separate"
    second_step: str = "semiparametric"
    order: int = 1
    propensity_kernel: str = "gaussian"
    pairwise_kernel: str = "epanechnikov"
    local_linear_kernel: str = "gaussian"
    propensity_bandwidth: object = "rule_of_thumb_undersmoothed"
    pairwise_bandwidth: object = "rule_of_thumb"
    local_linear_bandwidth: object = "rule_of_thumb_derivative"
    trim_lower: float = 0.01
    trim_upper: float = 0.01
    grid_size: int = 101
    leave_one_out: bool = False
    min_cell_size: int = 10
    profile: Optional[dict] = None
    late_window: tuple = (0.25, 0.75)
    threads: int = 1

    def __post_init__(self):
        if self.procedure not in PROCEDURES:
            raise ConfigError(f"procedure must be one of {PROCEDURES}, got {self.procedure!r}")
        if self.second_step not in SECOND_STEPS:
            raise ConfigError(f"second_step must be one of {SECOND_STEPS}, got {self.second_step!r}")
        if self.second_step != "semiparametric" and self.procedure != "separate":
            raise ConfigError("parametric second steps are available for the separate procedure only")
        for k in ("propensity_kernel", "pairwise_kernel", "local_linear_kernel"):
            as_kernel(getattr(self, k))
        for k in ("propensity_bandwidth", "pairwise_bandwidth", "local_linear_bandwidth"):
            BandwidthSpec.parse(getattr(self, k))
        if int(self.grid_size) < 3:
            raise ConfigError("grid_size must be >= 3")
        v1, v2 = self.late_window
        if not 0.0 <= v1 < v2 <= 1.0:
            raise ConfigError(f"late_window needs 0 <= v1 < v2 <= 1, got {self.late_window}")
        if self.second_step != "semiparametric":
            ParametricSpec(self.second_step, self.order)


@dataclass(eq=False)
class Estimates:
    propensity: PropensityFit
    profile: np.ndarray
    pi_x: float
    v: np.ndarray
    arms: Optional[tuple] = None
    liv: Optional[LivFit] = None
    mte: Optional[MteCurve] = None
    mte_liv: Optional[MteCurve] = None
    summary: Optional[CausalSummary] = None
    summary_liv: Optional[CausalSummary] = None
    structural: Optional[tuple] = None
    response: Optional[tuple] = None
    flags: dict = field(default_factory=dict)

    def vector(self) -> dict:
        """Flat targets for the bootstrap."""
        out = {}
        if self.arms is not None:
            b0, b1 = self.arms[0].beta, self.arms[1].beta
            out.update(beta0=b0, beta1=b1, delta=b1 - b0, mte=self.mte.values)
            s = self.summary
            out["params"] = np.array([s.ate, s.tt, s.tut, s.late])
            out["structural0"], out["structural1"] = self.structural
            out["prob_d"], out["mean_y"] = self.response
            out["g"] = np.stack([self.arms[0].evaluate(self.v)[0], self.arms[1].evaluate(self.v)[0]])
        if self.liv is not None:
            s = self.summary_liv
            out.update(
                liv_beta0=self.liv.beta0,
                liv_beta1=self.liv.beta0 + self.liv.delta,
                liv_delta=self.liv.delta,
                mte_liv=self.mte_liv.values,
            )
            out["liv_params"] = np.array([s.ate, s.tt, s.tut, s.late])
        return out


def resolve_profile(s: Sample, rows, profile: Optional[dict]):
    """Evaluation profile and the score at it.

    The score is the fitted score function at the profile when its discrete
    part is an observed integer cell, else the mean fitted score of ``rows``.
    """
    x = s.x[rows].mean(axis=0)
    explicit = set()
    if profile:
        for name, val in profile.items():
            if name not in s.names:
                raise ConfigError(f"profile covariate not found: {name}")
            x[s.names.index(name)] = float(val)
            explicit.add(name)
    return x, explicit


def _profile_score(s, fit, rows, x, explicit):
    kc = s.x_cont.shape[1]
    disc = x[kc:]
    disc_names = s.names[kc:]
    if all(nm in explicit for nm in disc_names) and np.all(np.mod(disc, 1) == 0):
        try:
            return float(fit.evaluate(x[None, :kc], disc[None, :].astype(np.int64))[0]), "score function"
        except EstimationError:
            pass
    return float(np.mean(fit.scores[rows])), "mean fitted score"


def fit_first_step(s: Sample, cfg: EstimationConfig) -> PropensityFit:
    fit = fit_propensity(
        s,
        cfg.propensity_kernel,
        BandwidthSpec.parse(cfg.propensity_bandwidth),
        leave_one_out=cfg.leave_one_out,
        min_cell_size=cfg.min_cell_size,
    )
    return trim(fit, cfg.trim_lower, cfg.trim_upper)


def estimate(s: Sample, cfg: EstimationConfig = None, v_grid=None) -> Estimates:
    """Run the full two-step estimator on ``s``.

    ``v_grid`` fixes the MTE grid (the bootstrap reuses the point estimate's
    grid); by default it spans the common support of the two arms.
    """
    cfg = cfg or EstimationConfig()
    s.require_both_arms()
    fit = fit_first_step(s, cfg)
    rows = np.flatnonzero(fit.kept)
    x, explicit = resolve_profile(s, rows, cfg.profile)
    pi_x, pi_source = _profile_score(s, fit, rows, x, explicit)
    v1, v2 = cfg.late_window
    flags = {"profile_score": pi_source}

    common = []
    for arm in (0, 1):
        p = fit.scores[rows][s.d[rows] == arm]
        common.append((p.min(), p.max()))
    lo, hi = max(common[0][0], common[1][0]), min(common[0][1], common[1][1])
    if v_grid is None:
        if not hi > lo:
            raise EstimationError("the two arms share no score support", module="effects")
        v_grid = np.linspace(lo, hi, cfg.grid_size)
    v = np.asarray(v_grid, dtype=float)
    out = Estimates(propensity=fit, profile=x, pi_x=pi_x, v=v, flags=flags)

    if cfg.procedure in ("separate", "both"):
        if cfg.second_step == "semiparametric":
            arms = tuple(
                fit_arm(
                    s, fit, arm,
                    pair_kernel=cfg.pairwise_kernel,
                    h2=BandwidthSpec.parse(cfg.pairwise_bandwidth),
                    ll_kernel=cfg.local_linear_kernel,
                    h3=BandwidthSpec.parse(cfg.local_linear_bandwidth),
                    grid_size=cfg.grid_size,
                    threads=cfg.threads,
                )
                for arm in (0, 1)
            )
        else:
            spec = ParametricSpec(cfg.second_step, cfg.order)
            arms = tuple(parametric_second_step(s, fit, arm, spec, cfg.grid_size) for arm in (0, 1))
        a0, a1 = arms
        g0, g0p, ext0 = a0.evaluate(v)
        g1, g1p, ext1 = a1.evaluate(v)
        mte = assemble_mte(a0.beta, a1.beta, g0, g0p, g1, g1p, x, v)
        mte.flagged = ext0 | ext1
        points = np.array([0.0, 1.0, pi_x, v1, v2])
        extrapolated = bool(a0.evaluate(points)[2].any() or a1.evaluate(points)[2].any())
        summary = causal_params(
            a0.beta, a1.beta, a0.level, a1.level, pi_x, x, v1, v2, extrapolated=extrapolated
        )
        out.arms, out.mte, out.summary = arms, mte, summary
        flags["extrapolated_boundary"] = extrapolated
        e0 = a0.mean_error_given_v(v)
        e1 = a1.mean_error_given_v(v)
        xbar = s.x[rows].mean(axis=0)
        out.structural = (
            marginal_structural(a0.beta, e0, xbar),
            marginal_structural(a1.beta, e1, xbar),
        )
        out.response = marginal_response(fit.scores[rows], s.x[rows], v, e0, e1, a0.beta, a1.beta)

    if cfg.procedure in ("liv", "both"):
        lf = fit_liv(
            s, fit,
            pair_kernel=cfg.pairwise_kernel,
            h2=BandwidthSpec.parse(cfg.pairwise_bandwidth),
            ll_kernel=cfg.local_linear_kernel,
            h3=BandwidthSpec.parse(cfg.local_linear_bandwidth),
            grid_size=cfg.grid_size,
            threads=cfg.threads,
        )
        r, q1, ext = lf.evaluate(v)
        out.liv = lf
        out.mte_liv = liv_mte(lf.delta, q1, x, v)
        out.mte_liv.flagged = ext
        points = np.array([0.0, 1.0, pi_x, v1, v2])
        extrapolated = bool(lf.evaluate(points)[2].any())
        out.summary_liv = liv_causal_params(
            lf.delta, lambda p: float(lf.evaluate(p)[0][0]), pi_x, x, v1, v2, extrapolated=extrapolated
        )
        flags["liv_extrapolated_boundary"] = extrapolated
    return out
