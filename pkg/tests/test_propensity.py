import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtefree import BandwidthSpec, DgpSpec, EstimationError, Sample, fit_propensity, generate, trim
from mtefree.propensity import fit_from_function

from oracles import nw_loop


def _sample(n=60, seed=0, cells=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    z = np.arange(n) % cells
    d = (rng.uniform(size=n) < 0.5).astype(int)
    return Sample(rng.normal(size=n), d, x, z[:, None])


@pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
def test_matches_brute_force_per_cell(kernel):
    s = _sample()
    h = np.array([1.5, 2.0])
    fit = fit_propensity(s, kernel, BandwidthSpec("fixed", tuple(h)))
    for key in (0, 1):
        rows = np.flatnonzero(s.x_disc[:, 0] == key)
        ref = nw_loop(s.x_cont[rows], s.x_cont[rows], s.d[rows], h, kernel)
        np.testing.assert_allclose(fit.scores[rows], ref, rtol=1e-12)


def test_leave_one_out_matches_brute_force():
    s = _sample(n=30, cells=1)
    h = np.array([0.8, 0.8])
    fit = fit_propensity(s, "gaussian", BandwidthSpec("fixed", 0.8), leave_one_out=True)
    for i in range(s.n):
        others = np.delete(np.arange(s.n), i)
        ref = nw_loop(s.x_cont[i], s.x_cont[others], s.d[others], h)[0]
        assert fit.scores[i] == pytest.approx(ref, rel=1e-12)


def test_all_treated_cell_is_one():
    s = _sample(n=40)
    d = np.where(s.x_disc[:, 0] == 1, 1, s.d)
    s = Sample(s.y, d, s.x_cont, s.x_disc)
    fit = fit_propensity(s, bandwidth=0.5)
    assert np.all(fit.scores[s.x_disc[:, 0] == 1] == 1.0)


def test_constant_covariate_gives_cell_mean():
    n = 24
    d = np.array([1, 0, 0, 1, 1, 1] * 4)
    s = Sample(np.zeros(n), d, np.full((n, 1), 2.5), np.zeros((n, 1), dtype=int))
    fit = fit_propensity(s, bandwidth=0.3)
    np.testing.assert_allclose(fit.scores, d.mean())
    assert fit.evaluate([[2.5]], [[0]])[0] == pytest.approx(d.mean())


def test_sin_design_accuracy():
    s, _ = generate(DgpSpec("sin", n=10_000, seed=7))
    fit = fit_propensity(s, bandwidth="rule_of_thumb")
    grid = np.linspace(0.5, 5.8, 200)
    err = np.abs(fit.evaluate(grid[:, None]) - (0.5 + 0.4 * np.sin(grid)))
    assert err.max() < 0.05


def test_evaluate_matches_in_sample_scores():
    s = _sample()
    fit = fit_propensity(s, bandwidth=1.0)
    np.testing.assert_allclose(fit.evaluate(s.x_cont, s.x_disc), fit.scores, rtol=1e-12)


def test_small_cells_dropped_and_unevaluable():
    rng = np.random.default_rng(3)
    z = np.r_[np.zeros(40, int), np.ones(5, int)]
    s = Sample(rng.normal(size=45), np.arange(45) % 2, rng.normal(size=(45, 1)), z[:, None])
    fit = fit_propensity(s, bandwidth=1.0)
    assert fit.dropped_cells == [(1,)]
    assert np.all(np.isnan(fit.scores[z == 1]))
    assert not fit.kept[z == 1].any()
    with pytest.raises(EstimationError, match="empty cell"):
        fit.evaluate([[0.0]], [[1]])
    with pytest.raises(EstimationError, match="empty cell"):
        fit.evaluate([[0.0]], [[7]])


def test_no_local_data():
    s = _sample(n=20, cells=1)
    fit = fit_propensity(s, "epanechnikov", bandwidth=0.5)
    with pytest.raises(EstimationError, match="no local data"):
        fit.evaluate([[50.0, 50.0]], [[0]])


def test_all_cells_too_small():
    s = _sample(n=8)
    with pytest.raises(EstimationError, match="minimum size"):
        fit_propensity(s)


def test_histogram_counts():
    s = _sample(n=80)
    fit = fit_propensity(s, bandwidth=1.0)
    edges, c1, c0 = fit.histogram(s.d, bins=10)
    assert edges[0] == 0.0 and edges[-1] == 1.0
    assert c1.sum() == s.d.sum() and c0.sum() == s.n - s.d.sum()


def _fit_with_scores(scores, d=None):
    n = len(scores)
    d = np.arange(n) % 2 if d is None else d
    s = Sample(np.zeros(n), d, np.zeros((n, 0)), np.zeros((n, 0), int))
    values = np.asarray(scores, dtype=float)
    return fit_from_function(s, lambda xc, xd: values)


def test_trim_one_per_tail():
    scores = np.random.default_rng(0).permutation(np.linspace(0.05, 0.95, 100))
    t = trim(_fit_with_scores(scores), 0.01, 0.01)
    assert t.trim_counts == (1, 1)
    assert t.kept.sum() == 98
    assert not t.kept[np.argmin(scores)] and not t.kept[np.argmax(scores)]
    assert t.support == (np.sort(scores)[1], np.sort(scores)[-2])


def test_trim_zero_is_identity():
    scores = np.random.default_rng(1).uniform(0.1, 0.9, 50)
    t = trim(_fit_with_scores(scores), 0.0, 0.0)
    assert t.kept.all()
    assert t.support == (scores.min(), scores.max())


def test_trim_ties_broken_by_row_index():
    scores = np.r_[np.full(5, 0.2), np.linspace(0.3, 0.9, 195)]
    t = trim(_fit_with_scores(scores), 0.01, 0.0)
    # two lowest slots among the five tied rows go to rows 0 and 1
    assert t.trim_counts == (2, 0)
    assert t.kept[:5].tolist() == [False, False, True, True, True]


def test_trim_emptying_arm_errors():
    scores = np.linspace(0.1, 0.9, 10)
    d = np.r_[np.ones(2, int), np.zeros(8, int)]
    with pytest.raises(EstimationError, match="empties a treatment arm"):
        trim(_fit_with_scores(scores, d), 0.2, 0.0)


@pytest.mark.parametrize("lo, hi", [(-0.1, 0.0), (0.5, 0.0), (0.0, 0.6)])
def test_trim_fraction_bounds(lo, hi):
    with pytest.raises(EstimationError, match="trim fractions"):
        trim(_fit_with_scores(np.linspace(0.1, 0.9, 10)), lo, hi)


@given(
    st.lists(st.floats(0.0, 1.0), min_size=20, max_size=80),
    st.floats(0.0, 0.2),
    st.floats(0.0, 0.2),
)
def test_trim_invariants(scores, lo, hi):
    scores = np.array(scores)
    try:
        t = trim(_fit_with_scores(scores), lo, hi)
    except EstimationError:
        return
    kept = scores[t.kept]
    n_lo, n_hi = t.trim_counts
    assert t.kept.sum() == len(scores) - n_lo - n_hi
    assert np.all((kept >= t.support[0]) & (kept <= t.support[1]))
    assert 0.0 <= t.support[0] <= t.support[1] <= 1.0
    dropped = scores[~t.kept]
    assert np.all((dropped <= t.support[0]) | (dropped >= t.support[1]))


@given(st.integers(0, 10_000))
def test_scores_in_unit_interval(seed):
    s = _sample(n=30, seed=seed, cells=1)
    fit = fit_propensity(s, bandwidth=0.7)
    assert np.all((fit.scores >= 0.0) & (fit.scores <= 1.0))
    assert fit.support[0] <= fit.support[1]
