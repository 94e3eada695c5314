import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from qreadout import (
    HypothesisModel,
    HypothesisSet,
    ModelError,
    TimeGrid,
    decide,
    matched_filter_pe,
    monte_carlo_error_rate,
)

NULL = HypothesisModel("ground", initial_prob=(1, 0))


def threshold_error(snr, p1, thr):
    """Error of 'choose H1 when llr > thr'; llr ~ N(-+snr/2, snr) under H0/H1."""
    sd = math.sqrt(snr)
    return (1 - p1) * norm.sf(thr, -snr / 2, sd) + p1 * norm.cdf(thr, snr / 2, sd)


@pytest.mark.parametrize("snr", [0.5, 1, 4, 9, 25])
def test_equal_priors_reduce_to_erfc(snr):
    pe, p_plus, p_minus = matched_filter_pe(snr)
    assert pe == pytest.approx(0.5 * math.erfc(math.sqrt(snr / 8)), rel=1e-14)
    assert p_plus == p_minus


@settings(max_examples=60, deadline=None)
@given(snr=st.floats(0.05, 60), p1=st.floats(0.02, 0.98))
def test_unequal_priors_match_gaussian_threshold_oracle(snr, p1):
    lam = math.log(p1 / (1 - p1))
    pe, p_plus, p_minus = matched_filter_pe(snr, lam)
    assert pe == pytest.approx(threshold_error(snr, p1, -lam), rel=1e-9, abs=1e-300)
    # the MAP threshold -lam minimizes the error over all thresholds
    best = minimize_scalar(lambda t: threshold_error(snr, p1, t), bounds=(-lam - 20, -lam + 20), method="bounded")
    assert pe <= best.fun + 1e-12
    assert p_minus == pytest.approx(norm.sf(-lam, -snr / 2, math.sqrt(snr)), rel=1e-9, abs=1e-300)


def test_zero_snr_picks_larger_prior():
    assert matched_filter_pe(0.0)[0] == 0.5
    assert matched_filter_pe(0.0, math.log(3))[0] == pytest.approx(0.25)
    with pytest.raises(ModelError):
        matched_filter_pe(-1.0)


def test_error_exponent_approaches_one_slowly():
    ratio = [-8 * math.log(matched_filter_pe(s)[0]) / s for s in (400, 1000, 2000, 4000)]
    assert all(b < a for a, b in zip(ratio, ratio[1:]))
    assert all(r > 1 for r in ratio)
    assert ratio[-1] - 1 < 0.01


def test_hypothesis_set_validation():
    h1 = HypothesisModel("excited", amplitude=1.0)
    hs = HypothesisSet([NULL, h1])
    assert np.array_equal(hs.priors, [0.5, 0.5])
    with pytest.raises(ModelError):
        HypothesisSet([NULL])
    with pytest.raises(ModelError, match="null"):
        HypothesisSet([h1, NULL])
    with pytest.raises(ModelError, match="unique"):
        HypothesisSet([NULL, h1, h1])
    with pytest.raises(ModelError):
        HypothesisSet([NULL, h1], [0.6, 0.5])
    with pytest.raises(ModelError):
        HypothesisSet([NULL, h1], [1.0])


def test_decide_map_and_ties():
    hs = HypothesisSet([NULL, HypothesisModel("a", amplitude=1), HypothesisModel("b", amplitude=2)])
    res = decide(hs, [0.0, 1.0, 1.0])
    assert res.chosen == 1
    np.testing.assert_allclose(res.posteriors, np.exp([0, 1, 1]) / np.exp([0, 1, 1]).sum())
    assert decide(hs, [0.0, 0.0, 0.0]).chosen == 0
    assert decide(hs, [0.0, -3.0, 2.0]).chosen == 2
    with pytest.raises(ModelError):
        decide(hs, [1.0, 0.0, 0.0])
    with pytest.raises(ModelError):
        decide(hs, [0.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(llr=st.lists(st.floats(-700, 700), min_size=2, max_size=2), p=st.floats(0.01, 0.99))
def test_posteriors_are_a_distribution(llr, p):
    hs = HypothesisSet([NULL, HypothesisModel("a", amplitude=1), HypothesisModel("b", amplitude=2)],
                       [p, (1 - p) / 2, (1 - p) / 2])
    res = decide(hs, [0.0] + llr)
    assert abs(res.posteriors.sum() - 1) < 1e-12
    assert np.all(res.posteriors >= 0)
    assert res.chosen == int(np.argmax(res.posteriors))


def test_zero_prior_is_rejected():
    hs = HypothesisSet([NULL, HypothesisModel("a", amplitude=1)], [1.0, 0.0])
    with pytest.raises(ModelError):
        decide(hs, [0.0, 1.0])


def _binary(snr, priors=None):
    return HypothesisSet([NULL, HypothesisModel("excited", amplitude=math.sqrt(snr), initial_prob=(0, 1))], priors)


def test_monte_carlo_is_deterministic_and_worker_independent():
    g = TimeGrid(1.0, 100)
    hs = _binary(2.0)
    a = monte_carlo_error_rate(hs, "gaussian", 2500, g, 42)
    b = monte_carlo_error_rate(hs, "gaussian", 2500, g, 42, workers=2)
    assert a.as_dict() == b.as_dict()
    assert a.counts.sum() == 2500 and a.confusion.shape == (2, 2)
    assert monte_carlo_error_rate(hs, "gaussian", 2500, g, 43).pe_hat != a.pe_hat


def test_monte_carlo_matches_matched_filter_with_unequal_priors():
    g = TimeGrid(1.0, 100)
    hs = _binary(4.0, [0.7, 0.3])
    res = monte_carlo_error_rate(hs, "gaussian", 20000, g, 5)
    pe = matched_filter_pe(4.0, math.log(0.3 / 0.7))[0]
    assert abs(res.pe_hat - pe) < 3 * math.sqrt(pe * (1 - pe) / 20000)


def test_monte_carlo_poisson_channel_and_three_hypotheses():
    g = TimeGrid(1.0, 1000)
    hs = HypothesisSet([
        NULL,
        HypothesisModel("dim", amplitude=0.5, initial_prob=(0, 1)),
        HypothesisModel("bright", amplitude=1.5, initial_prob=(0, 1)),
    ])
    res = monte_carlo_error_rate(hs, "poisson", 3000, g, 1, lambda0=20.0)
    assert res.confusion.shape == (3, 3)
    assert 0 < res.pe_hat < 2 / 3
    with pytest.raises(ModelError):
        monte_carlo_error_rate(hs, "poisson", 10, g, 1)
    with pytest.raises(ModelError):
        monte_carlo_error_rate(hs, "gaussian", 10, g, 1, lambda0=20.0)
    with pytest.raises(ModelError):
        monte_carlo_error_rate(hs, "radio", 10, g, 1)
