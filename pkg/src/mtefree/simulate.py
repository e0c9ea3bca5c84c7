"""Data-generating processes with closed-form MTE oracles.

Every preset draws X, an independent resistance V ~ U(0, 1), treats when
pi(X) >= V, and sets U_d = alpha_d + rho_d * Phi^{-1}(V) + noise. The
outcome is linear in X given V and E[U_d | V, X] = E[U_d | V], so the true
MTE is (alpha1 - alpha0) + x'(beta1 - beta0) + (rho1 - rho0) Phi^{-1}(v).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from mtefree.data import Sample
from mtefree.errors import ConfigError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(t):
    return np.exp(-0.5 * np.asarray(t, dtype=float) ** 2) * _INV_SQRT_2PI


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    draw_x: Callable
    propensity: Callable
    mean_x: tuple
    cont_names: tuple
    disc_names: tuple = ()
    beta0: tuple = ()
    beta1: tuple = ()
    draw_treatment: Optional[Callable] = None


def _uniform(lo, hi, k=1):
    def draw(rng, n):
        return rng.uniform(lo, hi, size=(n, k)), np.empty((n, 0), dtype=np.int64)

    return draw


def _uniform_with_binary(lo, hi):
    def draw(rng, n):
        x = rng.uniform(lo, hi, size=(n, 1))
        z = (rng.uniform(size=(n, 1)) < 0.5).astype(np.int64)
        return x, z

    return draw


def _normal(rng, n):
    return rng.standard_normal((n, 1)), np.empty((n, 0), dtype=np.int64)


def _sin_score(xc, xd):
    return 0.5 + 0.4 * np.sin(xc[:, 0])


def _separable_score(xc, xd):
    return 0.5 + 0.4 * np.sin(xc[:, 0] + 0.8 * xd[:, 0])


def _hetero_index(xc, xd):
    return 0.2 + 0.8 * xc[:, 0] + 0.3 * xd[:, 0]


def _hetero_scale(xc):
    return 0.5 + xc[:, 0] ** 2


def _hetero_score(xc, xd):
    return ndtr(_hetero_index(xc, xd) / _hetero_scale(xc))


def _hetero_treatment(rng, xc, xd):
    # linear index with heteroscedastic structural error U = sigma(X) * U_tilde;
    # the reduced-form resistance is V = Phi(U_tilde)
    u_tilde = rng.standard_normal(xc.shape[0])
    d = (_hetero_index(xc, xd) >= _hetero_scale(xc) * u_tilde).astype(np.int8)
    return d, ndtr(u_tilde)


PRESETS = {
    p.name: p
    for p in (
        Preset(
            "separable",
            "x ~ U[0, 2pi], z ~ Bernoulli(1/2), pi = 0.5 + 0.4 sin(x + 0.8 z)",
            _uniform_with_binary(0.0, 2 * np.pi),
            _separable_score,
            (np.pi, 0.5),
            ("x",),
            ("z",),
            (0.8, 0.4),
            (1.0, 0.6),
        ),
        Preset(
            "sin",
            "x ~ U[0, 2pi], pi = 0.5 + 0.4 sin(x)",
            _uniform(0.0, 2 * np.pi),
            _sin_score,
            (np.pi,),
            ("x",),
            beta0=(0.5,),
            beta1=(1.0,),
        ),
        Preset(
            "probit",
            "x ~ N(0, 1), pi = Phi(x) (monotone, violates NL1)",
            _normal,
            lambda xc, xd: ndtr(xc[:, 0]),
            (0.0,),
            ("x",),
            beta0=(0.5,),
            beta1=(1.0,),
        ),
        Preset(
            "hetero",
            "x ~ U[-2, 2], z ~ Bernoulli(1/2), D = 1{0.2 + 0.8x + 0.3z >= (0.5 + x^2) U}",
            _uniform_with_binary(-2.0, 2.0),
            _hetero_score,
            (0.0, 0.5),
            ("x",),
            ("z",),
            (0.5, 0.3),
            (1.0, 0.6),
            _hetero_treatment,
        ),
        Preset(
            "interaction",
            "x1, x2 ~ U[-1, 1], pi = Phi(x1 + x2 + 0.8 x1 x2)",
            _uniform(-1.0, 1.0, 2),
            lambda xc, xd: ndtr(xc[:, 0] + xc[:, 1] + 0.8 * xc[:, 0] * xc[:, 1]),
            (0.0, 0.0),
            ("x1", "x2"),
            beta0=(0.5, -0.5),
            beta1=(1.0, 0.0),
        ),
        Preset(
            "single_index",
            "x1, x2 ~ U[-1, 1], pi = Phi(x1 + x2) (NL2 fails)",
            _uniform(-1.0, 1.0, 2),
            lambda xc, xd: ndtr(xc[:, 0] + xc[:, 1]),
            (0.0, 0.0),
            ("x1", "x2"),
            beta0=(0.5, -0.5),
            beta1=(1.0, 0.0),
        ),
        Preset(
            "cubic",
            "x ~ U[-1.5, 1.5], pi = 0.2 + 0.6 Phi(x^3) (stationary point at 0)",
            _uniform(-1.5, 1.5),
            lambda xc, xd: 0.2 + 0.6 * ndtr(xc[:, 0] ** 3),
            (0.0,),
            ("x",),
            beta0=(0.5,),
            beta1=(1.0,),
        ),
    )
}


def get_preset(name) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available presets: {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class DgpSpec:
    """Simulation design. ``beta0``/``beta1`` default to the preset's values."""

    preset: str = "separable"
    n: int = 2000
    seed: int = 0
    alpha0: float = 0.0
    alpha1: float = 0.4
    beta0: Optional[tuple] = None
    beta1: Optional[tuple] = None
    rho0: float = -0.3
    rho1: float = 0.5
    noise: float = 0.2

    def __post_init__(self):
        p = get_preset(self.preset)
        if int(self.n) < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        if self.noise < 0:
            raise ConfigError("noise scale must be >= 0")
        k = len(p.cont_names) + len(p.disc_names)
        for name in ("beta0", "beta1"):
            val = getattr(self, name)
            val = getattr(p, name) if val is None else tuple(float(b) for b in val)
            if len(val) != k:
                raise ConfigError(f"{name} needs {k} entries for preset {self.preset!r}")
            object.__setattr__(self, name, val)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown DGP keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["beta0"], out["beta1"] = list(self.beta0), list(self.beta1)
        return out

    @property
    def delta(self) -> np.ndarray:
        return np.asarray(self.beta1) - np.asarray(self.beta0)

    @property
    def mean_x(self) -> np.ndarray:
        return np.asarray(get_preset(self.preset).mean_x, dtype=float)

    def propensity(self, x_cont, x_disc=None):
        x_cont = np.atleast_2d(np.asarray(x_cont, dtype=float))
        if x_disc is None:
            x_disc = np.empty((x_cont.shape[0], 0), dtype=np.int64)
        return get_preset(self.preset).propensity(x_cont, np.asarray(x_disc).reshape(x_cont.shape[0], -1))


@dataclass(frozen=True)
class OracleMte:
    """True MTE, control functions and causal parameters for a :class:`DgpSpec`."""

    spec: DgpSpec

    def __call__(self, x, v):
        x = np.asarray(x, dtype=float)
        s = self.spec
        return (s.alpha1 - s.alpha0) + float(x @ s.delta) + (s.rho1 - s.rho0) * ndtri(np.asarray(v, dtype=float))

    def mean_error(self, arm, v):
        """E[U_d | V = v]."""
        a, r = (self.spec.alpha1, self.spec.rho1) if arm == 1 else (self.spec.alpha0, self.spec.rho0)
        return a + r * ndtri(np.asarray(v, dtype=float))

    def control_function(self, arm, p):
        """``(g_d(p), g_d'(p))``."""
        p = np.asarray(p, dtype=float)
        t = ndtri(p)
        a, r = (self.spec.alpha1, self.spec.rho1) if arm == 1 else (self.spec.alpha0, self.spec.rho0)
        # r * t is 0 * inf at p in {0, 1} when r = 0
        rt = r * t if r else np.zeros_like(t)
        if arm == 1:
            g = a - r * _phi(t) / p
            g1 = (a + rt - g) / p
        else:
            g = a + r * _phi(t) / (1.0 - p)
            g1 = (g - a - rt) / (1.0 - p)
        return g, g1

    def params(self, x, pi_x, v1=0.25, v2=0.75):
        return oracle_params(self.spec, x, pi_x, v1, v2)

    def to_dict(self, x=None, pi_x=0.5, v1=0.25, v2=0.75):
        x = self.spec.mean_x if x is None else np.asarray(x, dtype=float)
        s = self.spec
        return {
            "mte_formula": "(alpha1 - alpha0) + x'(beta1 - beta0) + (rho1 - rho0) * Phi^{-1}(v)",
            "intercept_gap": s.alpha1 - s.alpha0,
            "delta": list(s.delta),
            "rho_gap": s.rho1 - s.rho0,
            "profile": list(x),
            "params": oracle_params(s, x, pi_x, v1, v2),
        }


def oracle_params(spec: DgpSpec, x, pi_x, v1=0.25, v2=0.75) -> dict:
    """True ATE, TT, TUT and LATE at profile ``x`` with score ``pi_x``."""
    if not 0.0 < pi_x < 1.0:
        raise ConfigError(f"pi_x must lie in (0, 1), got {pi_x}")
    if not 0.0 < v1 < v2 < 1.0:
        raise ConfigError(f"need 0 < v1 < v2 < 1, got ({v1}, {v2})")
    base = (spec.alpha1 - spec.alpha0) + float(np.asarray(x, dtype=float) @ spec.delta)
    gap = spec.rho1 - spec.rho0
    phi_pi = float(_phi(ndtri(pi_x)))
    return {
        "ATE": base,
        "TT": base - gap * phi_pi / pi_x,
        "TUT": base + gap * phi_pi / (1.0 - pi_x),
        "LATE": base + gap * float(_phi(ndtri(v1)) - _phi(ndtri(v2))) / (v2 - v1),
        "pi_x": pi_x,
        "late_window": [v1, v2],
    }


def generate(spec: DgpSpec):
    """Draw a :class:`Sample` and return it with its :class:`OracleMte`."""
    p = get_preset(spec.preset)
    rng = np.random.default_rng(spec.seed)
    n = int(spec.n)
    x_cont, x_disc = p.draw_x(rng, n)
    if p.draw_treatment is not None:
        d, v = p.draw_treatment(rng, x_cont, x_disc)
    else:
        v = rng.uniform(size=n)
        d = (p.propensity(x_cont, x_disc) >= v).astype(np.int8)
    t = ndtri(v)
    eps = rng.standard_normal((n, 2)) * spec.noise
    x = np.hstack([x_cont, x_disc.astype(float)])
    y0 = x @ np.asarray(spec.beta0) + spec.alpha0 + spec.rho0 * t + eps[:, 0]
    y1 = x @ np.asarray(spec.beta1) + spec.alpha1 + spec.rho1 * t + eps[:, 1]
    y = np.where(d == 1, y1, y0)
    sample = Sample(y, d, x_cont, x_disc, p.cont_names + p.disc_names, {"preset": spec.preset})
    return sample, OracleMte(spec)
