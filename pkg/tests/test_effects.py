import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from mtefree import DgpSpec, EstimationError, OracleMte, assemble_mte, causal_params
from mtefree.effects import liv_causal_params, liv_mte, marginal_response, marginal_structural, trapezoid_average

from oracles import mc_params

V99 = np.linspace(0.01, 0.99, 99)


def _oracle(**kw):
    base = dict(n=10, beta0=(0.0, 0.0), beta1=(0.0, 0.0), alpha0=0.0, alpha1=0.0, rho0=0.0, rho1=0.0)
    base.update(kw)
    return OracleMte(DgpSpec(**base))


def _assemble(orc, x, v):
    g0, d0 = orc.control_function(0, v)
    g1, d1 = orc.control_function(1, v)
    return assemble_mte(orc.spec.beta0, orc.spec.beta1, g0, d0, g1, d1, x, v)


def _g(orc, arm):
    return lambda p: float(orc.control_function(arm, p)[0])


def test_symmetric_spec_gives_zero():
    orc = _oracle(alpha0=0.3, alpha1=0.3, rho0=0.7, rho1=0.7)
    np.testing.assert_allclose(_assemble(orc, np.zeros(2), V99).values, 0.0, atol=1e-12)


def test_median_resistance():
    orc = _oracle(alpha1=0.4, rho0=-0.3, rho1=0.5, beta1=(0.2, 0.1))
    x = np.array([1.0, 2.0])
    val = _assemble(orc, x, np.array([0.5])).values[0]
    assert val == pytest.approx(0.4 + 0.2 + 0.2, abs=1e-12)


def test_one_sd_resistance():
    orc = _oracle(rho0=-0.25, rho1=0.75)
    val = _assemble(orc, np.zeros(2), np.array([ndtr(1.0)])).values[0]
    assert val == pytest.approx(1.0, abs=1e-8)


@given(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
    st.floats(-2, 2), st.floats(-2, 2),
)
def test_assembly_matches_closed_form(a0, a1, r0, r1, x0, x1):
    orc = _oracle(alpha0=a0, alpha1=a1, rho0=r0, rho1=r1, beta0=(0.5, -0.2), beta1=(1.0, 0.4))
    x = np.array([x0, x1])
    curve = _assemble(orc, x, V99)
    np.testing.assert_allclose(curve.values, orc(x, V99), atol=1e-8)


def test_grid_mismatch():
    with pytest.raises(EstimationError, match="grid mismatch"):
        assemble_mte([0.0], [0.0], np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(2), [1.0], np.zeros(3))


def test_exact_ate():
    orc = _oracle(alpha1=0.4, rho0=-0.3, rho1=0.5)
    s = causal_params(np.zeros(2), np.zeros(2), _g(orc, 0), _g(orc, 1), 0.5, np.zeros(2))
    assert s.ate == pytest.approx(0.4, abs=1e-8)


def test_tt_at_half():
    orc = _oracle(rho1=1.0)
    s = causal_params(np.zeros(2), np.zeros(2), _g(orc, 0), _g(orc, 1), 0.5, np.zeros(2))
    assert s.tt == pytest.approx(-0.797885, abs=1e-6)
    assert orc.params(np.zeros(2), 0.5)["TT"] == pytest.approx(-0.797885, abs=1e-6)


@pytest.mark.parametrize("pi_x, v1, v2", [(0.3, 0.25, 0.75), (0.7, 0.1, 0.4), (0.5, 0.6, 0.95)])
def test_params_match_oracle_and_simulation(pi_x, v1, v2):
    orc = _oracle(alpha1=0.4, rho0=-0.3, rho1=0.5, beta1=(0.2, 0.1))
    x = np.array([1.0, -1.0])
    s = causal_params(orc.spec.beta0, orc.spec.beta1, _g(orc, 0), _g(orc, 1), pi_x, x, v1, v2)
    truth = orc.params(x, pi_x, v1, v2)
    mc = mc_params(0.4, 0.1, 0.8, pi_x, v1, v2)
    for name, val in (("ATE", s.ate), ("TT", s.tt), ("TUT", s.tut), ("LATE", s.late)):
        assert val == pytest.approx(truth[name], abs=1e-8)
        mean, se = mc[name]
        assert abs(val - mean) <= 4 * se


def _wiggly(c0, c1, c2):
    return lambda p: c0 + c1 * np.sin(3 * p) + c2 * p**2


@given(
    st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)),
    st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)),
    st.floats(0.05, 0.95),
)
def test_identities_hold_for_any_control_function(c0, c1, pi_x):
    g0, g1 = _wiggly(*c0), _wiggly(*c1)
    b0, b1, x = np.array([0.3]), np.array([0.8]), np.array([1.5])
    s = causal_params(b0, b1, g0, g1, pi_x, x)
    assert pi_x * s.tt + (1 - pi_x) * s.tut == pytest.approx(s.ate, abs=1e-10)
    full = causal_params(b0, b1, g0, g1, pi_x, x, 0.0, 1.0)
    assert full.late == pytest.approx(full.ate, abs=1e-10)


def test_late_narrowing_to_full_window():
    orc = _oracle(alpha1=0.4, rho0=-0.3, rho1=0.5)
    eps = 1e-4
    late = orc.params(np.zeros(2), 0.5, eps, 1 - eps)["LATE"]
    assert late == pytest.approx(orc.params(np.zeros(2), 0.5)["ATE"], abs=1e-3)


@pytest.mark.parametrize("pi_x, v1, v2", [(0.0, 0.2, 0.8), (1.0, 0.2, 0.8), (0.5, 0.8, 0.2), (0.5, 0.3, 0.3)])
def test_param_domain_errors(pi_x, v1, v2):
    g = lambda p: 0.0
    with pytest.raises(EstimationError):
        causal_params([0.0], [0.0], g, g, pi_x, [1.0], v1, v2)


def _liv_r(orc):
    s = orc.spec
    return lambda p: s.alpha0 + (s.alpha1 - s.alpha0) * p - (s.rho1 - s.rho0) * float(norm.pdf(ndtri(p)))


def test_liv_params_match_oracle():
    orc = _oracle(alpha1=0.4, rho0=-0.3, rho1=0.5, beta1=(0.2, 0.1))
    x = np.array([1.0, 0.0])
    s = liv_causal_params(orc.spec.delta, _liv_r(orc), 0.4, x, 0.2, 0.6)
    truth = orc.params(x, 0.4, 0.2, 0.6)
    for name, val in (("ATE", s.ate), ("TT", s.tt), ("TUT", s.tut), ("LATE", s.late)):
        assert val == pytest.approx(truth[name], abs=1e-8)
    assert 0.4 * s.tt + 0.6 * s.tut == pytest.approx(s.ate, abs=1e-12)


def test_liv_mte_is_shift_plus_slope():
    q1 = np.linspace(-1, 1, 5)
    curve = liv_mte(np.array([0.5]), q1, np.array([2.0]), np.linspace(0.1, 0.9, 5))
    np.testing.assert_allclose(curve.values, 1.0 + q1)


def test_structural_flat_without_selection():
    orc = _oracle()
    beta, mean_x = np.array([1.0, 0.6]), np.array([np.pi, 0.5])
    curve = marginal_structural(beta, orc.mean_error(1, V99), mean_x)
    np.testing.assert_allclose(curve, mean_x @ beta)


def test_structural_one_sd():
    orc = _oracle(alpha1=0.25, rho1=1.0)
    beta, mean_x = np.array([1.0, 0.6]), np.array([np.pi, 0.5])
    val = marginal_structural(beta, orc.mean_error(1, ndtr(1.0)), mean_x)
    assert val == pytest.approx(mean_x @ beta + 0.25 + 1.0, abs=1e-8)


def _response_inputs(seed=0, n=200):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(0.1, 0.9, n)
    x = np.column_stack([rng.normal(size=n), rng.integers(0, 2, n)])
    v = np.linspace(0.0, 1.0, 21)
    m0, m1 = np.cos(v), np.sin(v) - 1.0
    return scores, x, v, m0, m1, np.array([0.5, 0.2]), np.array([1.0, -0.1])


def test_response_matches_row_loop():
    scores, x, v, m0, m1, b0, b1 = _response_inputs()
    prob, mean_y = marginal_response(scores, x, v, m0, m1, b0, b1)
    for k, vk in enumerate(v):
        treated = scores >= vk
        ref_y = np.mean(np.where(treated, x @ b1 + m1[k], x @ b0 + m0[k]))
        assert prob[k] == pytest.approx(treated.mean())
        assert mean_y[k] == pytest.approx(ref_y, abs=1e-12)


def test_response_edges():
    scores, x, v, m0, m1, b0, b1 = _response_inputs()
    prob, mean_y = marginal_response(scores, x, v, m0, m1, b0, b1)
    assert prob[0] == 1.0
    assert prob[-1] == 0.0
    assert mean_y[-1] == pytest.approx(x.mean(axis=0) @ b0 + m0[-1], abs=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.0, 0.4), st.floats(0.6, 1.0))
def test_trapezoid_exact_on_lines(a, b, lo, hi):
    v = np.linspace(0.0, 1.0, 51)
    assert trapezoid_average(v, a + b * v, lo, hi) == pytest.approx(a + b * (lo + hi) / 2, abs=1e-10)
