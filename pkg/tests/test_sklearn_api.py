import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import random_panel
from didmatch.estimators import DIDRatioEstimator, PairMatcher
from didmatch.exceptions import ConfigError, ValidationError
from didmatch.matcher import MatchedSample


def test_get_set_params_and_clone():
    m = PairMatcher(combine="penalty", xi=0.5)
    assert m.get_params()["xi"] == 0.5
    est = DIDRatioEstimator(matcher=m, alpha=0.1)
    params = est.get_params(deep=True)
    assert params["matcher__combine"] == "penalty"
    twin = clone(est).set_params(matcher__xi=1.0)
    assert twin.matcher.xi == 1.0 and m.xi == 0.5


def test_matcher_on_arrays(rng):
    X = rng.normal(size=(11, 2))
    dz = rng.normal(size=11)
    m = PairMatcher().fit(X, dz)
    assert len(m.pairs_) == 5 and len(m.excluded_) == 1
    labels = m.labels_
    assert (labels == -1).sum() == 1
    assert sorted(np.bincount(labels[labels >= 0])) == [2] * 5
    assert isinstance(m.transform(), MatchedSample)


def test_matcher_input_validation(rng):
    with pytest.raises(ValueError):
        PairMatcher().fit(np.array([[np.nan, 1.0], [0.0, 1.0]]), [0.0, 1.0])
    with pytest.raises(ValidationError):
        PairMatcher().fit(rng.normal(size=(4, 2)), [0.0, 1.0])
    with pytest.raises(ValidationError):
        PairMatcher().fit(rng.normal(size=(4, 2)))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        DIDRatioEstimator().confidence_interval()
    with pytest.raises(NotFittedError):
        PairMatcher().transform()


def test_estimator_on_panel_matches_functional(rng):
    ds = random_panel(rng, n=30)
    est = DIDRatioEstimator().fit(ds)
    ms = est.matched_sample_
    assert est.tau_hat_ == pytest.approx(np.mean((ms.dy_hi - ms.dy_lo) / ms.gaps))
    assert est.se_ == pytest.approx(np.sqrt(est.s2_))
    assert est.ci_ == est.confidence_interval()
    assert np.allclose(est.leverages_, 1 / 15)
    assert est.predict([2.0]) == pytest.approx(2 * est.tau_hat_)


def test_estimator_on_arrays(rng):
    X = rng.normal(size=(20, 2))
    dz = rng.normal(size=20)
    dy = 1.5 * dz
    est = DIDRatioEstimator().fit(X, dz, dy)
    assert est.tau_hat_ == pytest.approx(1.5)
    assert est.s2_ == pytest.approx(0.0, abs=1e-20)


def test_estimator_alpha_checked(rng):
    with pytest.raises(ConfigError):
        DIDRatioEstimator(alpha=0.7).fit(random_panel(rng))


def test_estimator_randomization(rng):
    ds = random_panel(rng, n=16)
    est = DIDRatioEstimator().fit(ds)
    assert 0 < est.randomization_test(0.0) <= 1


def test_q_with_covariate_means(rng):
    ds = random_panel(rng, n=40)
    est = DIDRatioEstimator(q_mode="intercept_plus_covariate_means", covariates=["x1"]).fit(ds)
    assert est.leverages_.sum() == pytest.approx(2.0)
