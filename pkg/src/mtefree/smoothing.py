"""Kernels and bandwidth rules."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from mtefree.errors import ConfigError, EstimationError

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class Kernel(str, Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"

    @property
    def radius(self) -> float:
        """Half-width of the support (inf for the gaussian)."""
        return 1.0 if self is Kernel.EPANECHNIKOV else np.inf

    def __call__(self, u):
        return kernel_eval(self, u)


def as_kernel(k) -> Kernel:
    try:
        return Kernel(k)
    except ValueError:
        raise ConfigError(
            f"unknown kernel {k!r}; choose from {[m.value for m in Kernel]}"
        ) from None


def kernel_eval(kernel, u):
    """Evaluate a second-order kernel at ``u`` (scalar or array)."""
    kernel = as_kernel(kernel)
    u = np.asarray(u, dtype=float)
    if kernel is Kernel.GAUSSIAN:
        out = np.exp(-0.5 * u * u) / _SQRT_2PI
    else:
        out = 0.75 * (1.0 - u * u)
        out = np.where(np.abs(u) < 1.0, out, 0.0)
    return out if out.ndim else float(out)


def rule_of_thumb(values, rate: float = -0.2) -> float:
    """Normal-reference bandwidth ``1.06 * min(sd, IQR/1.349) * n**rate``.

    The default rate is the usual ``-1/5``. Falls back to the standard
    deviation when the IQR is zero but the spread is not.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.shape[0] < 2:
        raise EstimationError("degenerate bandwidth: fewer than two values", module="smoothing")
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.349
    spread = min(sd, iqr) if iqr > 0 else sd
    if not np.isfinite(spread) or spread <= 0:
        raise EstimationError("degenerate bandwidth: values have zero spread", module="smoothing")
    return float(1.06 * spread * x.shape[0] ** rate)


# rate exponent per rule: level estimation, slope estimation, and an
# undersmoothed first step (n h^4 -> 0) for the two-step estimators
RATES = {
    "rule_of_thumb": -1.0 / 5.0,
    "rule_of_thumb_derivative": -1.0 / 7.0,
    "rule_of_thumb_undersmoothed": -2.0 / 7.0,
}
RULES = tuple(RATES)
MODES = RULES + ("fixed",)


@dataclass(frozen=True)
class BandwidthSpec:
    """A bandwidth rule or fixed value(s), resolved per dimension.

    Modes: ``fixed`` or one of the rules in ``RATES``, which share the
    normal-reference constant and differ only in the rate exponent.
    """

    mode: str = "rule_of_thumb"
    value: Union[float, Sequence[float], None] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"bandwidth mode must be one of {MODES} or a number, got {self.mode!r}")
        if self.mode == "fixed":
            vals = np.atleast_1d(np.asarray(self.value, dtype=float))
            if vals.size == 0 or not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                raise ConfigError(f"fixed bandwidths must be positive and finite, got {self.value!r}")

    @classmethod
    def parse(cls, raw) -> "BandwidthSpec":
        """Accept a rule name, a number, a list of numbers, or a spec."""
        if isinstance(raw, BandwidthSpec):
            return raw
        if raw is None:
            return cls()
        if isinstance(raw, str):
            if raw in RULES:
                return cls(raw)
            raise ConfigError(f"bandwidth must be one of {RULES} or numeric, got {raw!r}")
        if isinstance(raw, (int, float)):
            return cls("fixed", float(raw))
        return cls("fixed", tuple(float(v) for v in raw))

    def resolve(self, values) -> np.ndarray:
        """Bandwidth per column of ``values`` (1-D input counts as one column)."""
        x = np.asarray(values, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        dims = x.shape[1]
        if self.mode == "fixed":
            vals = np.atleast_1d(np.asarray(self.value, dtype=float))
            if vals.size == 1:
                return np.full(dims, vals[0])
            if vals.size != dims:
                raise ConfigError(f"{vals.size} fixed bandwidths for {dims} dimensions")
            return vals.copy()
        rate = RATES[self.mode]
        return np.array([rule_of_thumb(x[:, j], rate) for j in range(dims)])

    def to_json(self):
        if self.mode in RULES:
            return self.mode
        v = self.value
        return list(v) if isinstance(v, (tuple, list)) else v
