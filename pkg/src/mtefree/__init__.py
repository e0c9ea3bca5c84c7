"""Marginal treatment effects without instrumental variables.

Two-step semiparametric estimation: a kernel propensity score within
discrete-covariate cells, then either per-arm pairwise-difference
coefficients with local-linear control functions (the separate
procedure) or a whole-sample adapted local-IV regression.
"""

from mtefree.data import Cell, ColumnMap, Sample, load_csv, split_cells
from mtefree.errors import ConfigError, DataError, EstimationError
from mtefree.smoothing import BandwidthSpec, Kernel, kernel_eval, rule_of_thumb
from mtefree.propensity import PropensityFit, fit_propensity, trim
from mtefree.separate import ArmFit, ParametricSpec, fit_arm, parametric_second_step
from mtefree.liv import LivFit, fit_liv
from mtefree.effects import CausalSummary, MteCurve, assemble_mte, causal_params
from mtefree.inference import BootstrapResult, bootstrap
from mtefree.simulate import DgpSpec, OracleMte, generate, oracle_params
from mtefree.pipeline import EstimationConfig, Estimates, estimate

__version__ = "0.1.0"

__all__ = [
    "ArmFit",
    "BandwidthSpec",
    "BootstrapResult",
    "CausalSummary",
    "Cell",
    "ColumnMap",
    "ConfigError",
    "DataError",
    "DgpSpec",
    "EstimationConfig",
    "EstimationError",
    "Estimates",
    "Kernel",
    "LivFit",
    "MteCurve",
    "OracleMte",
    "ParametricSpec",
    "PropensityFit",
    "Sample",
    "assemble_mte",
    "bootstrap",
    "causal_params",
    "estimate",
    "fit_arm",
    "fit_liv",
    "fit_propensity",
    "generate",
    "kernel_eval",
    "load_csv",
    "oracle_params",
    "parametric_second_step",
    "rule_of_thumb",
    "split_cells",
    "trim",
]
