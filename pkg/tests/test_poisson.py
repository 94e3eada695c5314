import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import poisson

from qreadout import (
    CountRecord,
    FilterState,
    HypothesisModel,
    InvariantBreach,
    ModelError,
    TimeGrid,
    estimator_nu,
    gaussian_limit_gaps,
    gaussian_limit_transform,
    llr_poisson,
    poisson_dmz_step,
    poisson_filter_and_llr,
    poisson_filter_numeric,
    poisson_solve_no_decay,
    poisson_solve_no_excitation,
    sample_trajectories,
    simulate_poisson,
    transition_matrices,
)
from qreadout.poisson import correlate_counts, gaussian_limit_model

LAM = 15.0


def _counts(model, grid, n, seed, lam=LAM):
    rng = np.random.default_rng(seed)
    return simulate_poisson(model, sample_trajectories(model, grid, n, rng), lam, grid, rng)


def forward_log_likelihood_ratio(model, record):
    """Forward recursion with Poisson increment probabilities against the baseline."""
    grid = record.grid
    m = transition_matrices(model, grid)
    lam0 = record.lambda0.on(grid)
    lam1 = lam0 * (1 + model.amplitude.on(grid))
    alpha = np.array(model.initial_prob, float)
    log_c = 0.0
    for k, dn in enumerate(record.dn):
        alpha = m[k] @ alpha
        null = poisson.logpmf(dn, lam0[k] * grid.dt)
        alpha = alpha * np.exp([0.0, poisson.logpmf(dn, lam1[k] * grid.dt) - null])
        s = alpha.sum()
        log_c += np.log(s)
        alpha /= s
    return log_c


def test_record_validation(grid):
    with pytest.raises(ModelError, match="0 or 1"):
        CountRecord(grid, np.full(grid.K, 2), 1.0)
    with pytest.raises(ModelError):
        CountRecord(grid, np.zeros(grid.K), 0.0)
    with pytest.raises(ModelError, match="K = 2000"):
        CountRecord(grid, np.zeros(grid.K), 200.0)
    r = CountRecord(grid, np.ones(grid.K), 1.0)
    assert r.n[0] == 0 and r.n[-1] == grid.K


def test_amplitude_must_exceed_minus_one(grid):
    m = HypothesisModel(amplitude=-1.5, initial_prob=(0, 1))
    with pytest.raises(ModelError, match="alpha > -1"):
        simulate_poisson(m, sample_trajectories(m, grid, 1, 0), 1.0, grid, 0)
    with pytest.raises(ModelError, match="alpha > -1"):
        poisson_filter_numeric(m, CountRecord(grid, np.zeros(grid.K), 1.0))


def test_simulated_count_mean():
    g = TimeGrid(1.0, 2000)
    m = HypothesisModel(amplitude=1.0, initial_prob=(0, 1))
    n = _counts(m, g, 2000, 1).n[:, -1]
    # Bernoulli thinning: mean K p with p = 2 lambda0 dt
    p = 2 * LAM * g.dt
    assert abs(n.mean() - g.K * p) < 4 * np.sqrt(g.K * p * (1 - p) / 2000)


def test_step_loop_equals_compiled_filter(mixing, grid):
    m = mixing.replace(amplitude=0.8)
    r = _counts(m, grid, 1, 2)
    rec = CountRecord(grid, r.dn[0], LAM)
    path = poisson_filter_numeric(m, rec)
    s = FilterState.initial(m)
    for k in range(grid.K):
        s = poisson_dmz_step(s, m, rec.dn[k], k, rec)
        np.testing.assert_allclose(s.p, path.p[k + 1], atol=1e-13)
        assert abs(s.log_scale - path.log_scale[k + 1]) < 1e-11


@settings(max_examples=25, deadline=None)
@given(
    decay=st.floats(0, 4),
    exc=st.floats(0, 4),
    alpha=st.floats(-0.95, 3),
    p1=st.floats(0, 1),
    seed=st.integers(0, 2**32),
)
def test_log_scale_equals_forward_recursion(decay, exc, alpha, p1, seed):
    g = TimeGrid(1.0, 1000)
    m = HypothesisModel(decay=decay, excitation=exc, amplitude=alpha, initial_prob=(1 - p1, p1))
    r = _counts(m, g, 1, seed)
    rec = CountRecord(g, r.dn[0], LAM)
    assert abs(poisson_filter_numeric(m, rec).log_scale[-1] - forward_log_likelihood_ratio(m, rec)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(kappa=st.floats(0.01, 1e4), seed=st.integers(0, 2**32))
def test_reference_intensity_invariance(kappa, seed):
    g = TimeGrid(1.0, 500)
    m = HypothesisModel(decay=1.0, excitation=0.7, amplitude=1.5, initial_prob=(0.6, 0.4))
    r = _counts(m, g, 2, seed)
    base = poisson_filter_numeric(m, r)
    other = poisson_filter_numeric(m, r, kappa)
    np.testing.assert_allclose(other.p, base.p, atol=1e-11)
    np.testing.assert_allclose(other.log_scale, base.log_scale, atol=1e-8)


def test_kappa_must_be_positive(mixing, grid):
    with pytest.raises(ModelError):
        poisson_filter_numeric(mixing.replace(amplitude=1.0), CountRecord(grid, np.zeros(grid.K), 1.0), 0.0)


def test_deterministic_llr_closed_form(grid):
    m = HypothesisModel(amplitude=0.7, initial_prob=(0, 1))
    r = _counts(m, grid, 10, 4)
    llr = llr_poisson(m, r)
    np.testing.assert_allclose(llr.final, r.n[:, -1] * np.log1p(0.7) - LAM * 0.7, atol=1e-11)
    assert np.all(llr.llr[:, 0] == 0)


def test_no_transition_closed_forms_are_exact(grid):
    m = HypothesisModel(amplitude=1.3, initial_prob=(0.4, 0.6))
    r = _counts(m, grid, 5, 6)
    p1 = 0.6 * np.exp(r.n * np.log1p(1.3) - LAM * 1.3 * grid.times)
    for solve in (poisson_solve_no_excitation, poisson_solve_no_decay):
        state, _ = solve(m, r)
        np.testing.assert_allclose(state.p[..., 1], p1 / (0.4 + p1), atol=1e-12)
        np.testing.assert_allclose(state.log_scale, np.log(0.4 + p1), atol=1e-11)


@pytest.mark.parametrize("case", ["decay", "excitation"])
def test_closed_form_converges_to_split_step(case):
    m = HypothesisModel(decay=1.3 if case == "decay" else 0.0, excitation=1.3 if case == "excitation" else 0.0,
                        amplitude=1.0, initial_prob=(0.3, 0.7))
    solve = poisson_solve_no_excitation if case == "decay" else poisson_solve_no_decay
    g = TimeGrid(1.0, 2000)
    r = _counts(m, g, 20, 3)
    s = m.amplitude.at_points(g)
    gap = np.abs(estimator_nu(solve(m, r)[0], s) - estimator_nu(poisson_filter_numeric(m, r), s)).max()
    assert gap < 1e-3


def test_dispatch_and_null(mixing, decaying, grid):
    m = decaying.replace(amplitude=0.5)
    r = _counts(m, grid, 2, 1)
    np.testing.assert_array_equal(poisson_filter_and_llr(m, r)[0].p, poisson_solve_no_excitation(m, r)[0].p)
    assert np.all(llr_poisson(HypothesisModel("null"), r).llr == 0)


def test_correlate_counts_rejects_degenerate_estimate():
    with pytest.raises(InvariantBreach):
        correlate_counts(np.array([-1.0, 0.0]), np.array([1]), np.array([1.0]), 0.1)


def test_gaussian_limit_transform():
    g = TimeGrid(1.0, 1000)
    r = CountRecord(g, np.r_[np.ones(10), np.zeros(990)], 25.0)
    y = gaussian_limit_transform(r)
    np.testing.assert_allclose(y.y[-1], (10 - 25.0) / 5.0)
    assert gaussian_limit_model(HypothesisModel(amplitude=2.0), 25.0).amplitude.values == 0.4
    with pytest.raises(ModelError):
        gaussian_limit_transform(CountRecord(g, np.zeros(1000), np.full(1000, 25.0)))


def test_gaussian_limit_gap_shrinks():
    g = TimeGrid(1.0, 20000)
    m = HypothesisModel(decay=1.0, amplitude=2.0, initial_prob=(0, 1))
    small = np.median(gaussian_limit_gaps(m, 30.0, g, 60, 1))
    large = np.median(gaussian_limit_gaps(m, 1000.0, g, 60, 1))
    assert large < small
