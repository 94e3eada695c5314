import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from qreadout import (
    FilterState,
    GaussianRecord,
    HypothesisModel,
    InvariantBreach,
    ModelError,
    TimeGrid,
    dmz_filter_numeric,
    dmz_solve_no_decay,
    dmz_solve_no_excitation,
    dmz_step_numeric,
    estimator_mu,
    filter_and_llr,
    llr_estimator_correlator,
    sample_trajectories,
    simulate_gaussian,
    transition_matrices,
)


def _record(model, grid, n, seed):
    rng = np.random.default_rng(seed)
    return simulate_gaussian(model, sample_trajectories(model, grid, n, rng), grid, rng)


def forward_log_likelihood_ratio(model, record):
    """Hidden-Markov forward recursion with Gaussian increment densities."""
    grid = record.grid
    m = transition_matrices(model, grid)
    sigma = model.amplitude.on(grid)
    sd = np.sqrt(grid.dt)
    alpha = np.array(model.initial_prob, float)
    log_c = 0.0
    for k, dy in enumerate(record.dy):
        alpha = m[k] @ alpha
        null = norm.logpdf(dy, 0.0, sd)
        alpha = alpha * np.exp([0.0, norm.logpdf(dy, sigma[k] * grid.dt, sd) - null])
        s = alpha.sum()
        log_c += np.log(s)
        alpha /= s
    return log_c


def test_record_validation(grid):
    with pytest.raises(ModelError):
        GaussianRecord(grid, np.zeros(grid.K - 1))
    with pytest.raises(ModelError):
        GaussianRecord(grid, np.full(grid.K, np.nan))
    r = GaussianRecord(grid, np.ones(grid.K))
    assert r.y[0] == 0 and r.y[-1] == grid.K


def test_simulation_statistics(grid):
    m = HypothesisModel(amplitude=3.0, initial_prob=(0, 1))
    r = _record(m, grid, 4000, 1)
    # y(T) ~ N(sigma T, T) for a constantly excited qubit
    assert abs(r.y[:, -1].mean() - 3.0) < 4 / np.sqrt(4000)
    assert abs(r.y[:, -1].var() - 1.0) < 0.1
    assert np.array_equal(r.dy, _record(m, grid, 4000, 1).dy)


@pytest.mark.parametrize("scheme", ["split", "euler"])
def test_step_loop_equals_compiled_filter(mixing, grid, scheme):
    r = _record(mixing, grid, 1, 5)
    dy = r.dy[0]
    path = dmz_filter_numeric(mixing, GaussianRecord(grid, dy), scheme)
    s = FilterState.initial(mixing)
    for k in range(grid.K):
        s = dmz_step_numeric(s, mixing, dy[k], k, grid, scheme)
        np.testing.assert_allclose(s.p, path.p[k + 1], rtol=0, atol=1e-13)
        assert abs(s.log_scale - path.log_scale[k + 1]) < 1e-11


def test_unknown_scheme(mixing, grid):
    with pytest.raises(ValueError):
        dmz_filter_numeric(mixing, GaussianRecord(grid, np.zeros(grid.K)), "rk4")


@settings(max_examples=25, deadline=None)
@given(
    decay=st.floats(0, 4),
    exc=st.floats(0, 4),
    sigma=st.floats(-3, 3),
    p1=st.floats(0, 1),
    seed=st.integers(0, 2**32),
)
def test_log_scale_equals_forward_recursion(decay, exc, sigma, p1, seed):
    g = TimeGrid(1.0, 120)
    m = HypothesisModel(decay=decay, excitation=exc, amplitude=sigma, initial_prob=(1 - p1, p1))
    r = _record(m, g, 1, seed)
    rec = GaussianRecord(g, r.dy[0])
    state = dmz_filter_numeric(m, rec)
    assert abs(state.log_scale[-1] - forward_log_likelihood_ratio(m, rec)) < 1e-10


def test_deterministic_signal_llr_is_matched_filter(grid):
    m = HypothesisModel(amplitude=1.7, initial_prob=(0, 1))
    r = _record(m, grid, 20, 2)
    llr = llr_estimator_correlator(m, r)
    np.testing.assert_allclose(llr.final, 1.7 * r.y[:, -1] - 0.5 * 1.7**2, atol=1e-12)
    np.testing.assert_allclose(llr.llr[:, 0], 0.0)
    np.testing.assert_allclose(llr.mu, 1.7)


def test_null_model_has_zero_llr(grid):
    r = _record(HypothesisModel(amplitude=1.0), grid, 3, 0)
    assert np.all(llr_estimator_correlator(HypothesisModel("null"), r).llr == 0)


@settings(max_examples=25, deadline=None)
@given(sigma=st.floats(-3, 3), decay=st.floats(0, 3), p1=st.floats(0, 1), seed=st.integers(0, 2**32))
def test_estimate_stays_between_levels(sigma, decay, p1, seed):
    g = TimeGrid(1.0, 100)
    m = HypothesisModel(decay=decay, excitation=0.4, amplitude=sigma, initial_prob=(1 - p1, p1))
    mu = llr_estimator_correlator(m, _record(m, g, 2, seed)).mu
    lo, hi = min(0.0, sigma), max(0.0, sigma)
    assert np.all(mu >= lo - 1e-12) and np.all(mu <= hi + 1e-12)


def test_closed_forms_reject_wrong_model(mixing, grid):
    r = GaussianRecord(grid, np.zeros(grid.K))
    with pytest.raises(ModelError):
        dmz_solve_no_excitation(mixing, r)
    with pytest.raises(ModelError):
        dmz_solve_no_decay(mixing, r)


def test_no_transition_closed_forms_are_exact(grid):
    # with both rates zero each closed form is the exact GBM solution
    m = HypothesisModel(amplitude=2.0, initial_prob=(0.4, 0.6))
    r = _record(m, grid, 5, 9)
    p1 = 0.6 * np.exp(2.0 * r.y - 2.0 * grid.times)
    expect = p1 / (0.4 + p1)
    for solve in (dmz_solve_no_excitation, dmz_solve_no_decay):
        state, trace = solve(m, r)
        np.testing.assert_allclose(state.p[..., 1], expect, atol=1e-12)
        np.testing.assert_allclose(state.log_scale, np.log(0.4 + p1), atol=1e-11)
    np.testing.assert_allclose(dmz_filter_numeric(m, r).p[..., 1], expect, atol=1e-12)


@pytest.mark.parametrize("case", ["decay", "excitation"])
def test_closed_form_converges_to_split_step(case):
    m = HypothesisModel(decay=1.3 if case == "decay" else 0.0, excitation=1.3 if case == "excitation" else 0.0,
                        amplitude=2.0, initial_prob=(0.3, 0.7))
    solve = dmz_solve_no_excitation if case == "decay" else dmz_solve_no_decay
    gaps = []
    for K in (500, 1000):
        g = TimeGrid(1.0, K)
        r = _record(m, g, 20, 4)
        s = m.amplitude.at_points(g)
        gaps.append(np.abs(estimator_mu(solve(m, r)[0], s) - estimator_mu(dmz_filter_numeric(m, r), s)).max())
    assert gaps[1] < 1e-3 and gaps[1] < gaps[0]


def test_filter_and_llr_dispatch(decaying, mixing, grid):
    r = _record(mixing, grid, 2, 3)
    s_closed, t_closed = filter_and_llr(decaying, r)
    s_ref, _ = dmz_solve_no_excitation(decaying, r)
    np.testing.assert_array_equal(s_closed.p, s_ref.p)
    state, trace = filter_and_llr(mixing, r)
    np.testing.assert_array_equal(state.p, dmz_filter_numeric(mixing, r).p)
    assert trace.llr.shape == (2, grid.K + 1)


def test_batch_equals_single_rows(mixing, grid):
    r = _record(mixing, grid, 4, 8)
    batch = llr_estimator_correlator(mixing, r).llr
    for i in range(4):
        row = llr_estimator_correlator(mixing, GaussianRecord(grid, r.dy[i])).llr
        np.testing.assert_array_equal(row, batch[i])


def test_euler_breach_reports_step(grid):
    m = HypothesisModel(decay=0.5, amplitude=5.0, initial_prob=(0.5, 0.5))
    dy = np.zeros(grid.K)
    dy[7] = -1.0
    with pytest.raises(InvariantBreach) as info:
        dmz_filter_numeric(m, GaussianRecord(grid, dy), "euler")
    assert info.value.step == 7
    # the split scheme is positive for any increment
    assert np.all(dmz_filter_numeric(m, GaussianRecord(grid, dy)).p >= 0)
