"""scikit-learn style wrappers around matching and estimation.

>>> matcher = PairMatcher(combine="ratio").fit(X, delta_z)       # doctest: +SKIP
>>> est = DIDRatioEstimator().fit(panel)                          # doctest: +SKIP
>>> est.tau_hat_, est.ci_                                         # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .core import PanelDataset
from .distances import DistanceSpec, build_distance_matrix
from .estimator import (
    EstimandSpec,
    VarianceSpec,
    check_alpha,
    confidence_interval,
    estimate,
    randomization_test,
)
from .exceptions import ValidationError
from .matcher import DEFAULT_SCALE, MatchedSample, match_units, to_matched_sample


def _panel_from_xz(X, delta_z, delta_y=None) -> PanelDataset:
    X = check_array(X, ensure_min_features=0, ensure_min_samples=2)
    dz = column_or_1d(check_array(np.asarray(delta_z, dtype=float).reshape(-1, 1), ensure_2d=True))
    if dz.shape[0] != X.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows but delta_z has {dz.shape[0]}")
    if delta_y is None:
        dy = np.zeros_like(dz)
    else:
        dy = column_or_1d(check_array(np.asarray(delta_y, dtype=float).reshape(-1, 1)))
        if dy.shape[0] != X.shape[0]:
            raise ValidationError(f"X has {X.shape[0]} rows but delta_y has {dy.shape[0]}")
    zeros = np.zeros_like(dz)
    return PanelDataset.from_arrays(X, zeros, dz, zeros, dy)


class PairMatcher(BaseEstimator):
    """Optimal non-bipartite pairing of units.

    Parameters
    ----------
    covariate_metric : {"mahalanobis", "rank_mahalanobis", "euclidean"}
    combine : {"ratio", "penalty"}
    epsilon, big_m, xi, ridge : float or None
        Distance tuning constants; ``None`` uses data-scaled defaults.
    scale : float
        Cost quantisation factor for the exact solver.
    max_exact_n : int
        Largest problem solved exactly; beyond it a greedy pairing is used.

    Attributes
    ----------
    pairs_ : list of (str, str)
    labels_ : ndarray of int
        Pair index of each input row, ``-1`` for an excluded unit.
    total_cost_ : float
    spec_ : DistanceSpec
        The spec with defaults filled in.
    matched_sample_ : MatchedSample
    """

    def __init__(self, covariate_metric="mahalanobis", combine="ratio", epsilon=None,
                 big_m=None, xi=None, ridge=None, scale=DEFAULT_SCALE, max_exact_n=5000):
        self.covariate_metric = covariate_metric
        self.combine = combine
        self.epsilon = epsilon
        self.big_m = big_m
        self.xi = xi
        self.ridge = ridge
        self.scale = scale
        self.max_exact_n = max_exact_n

    def _spec(self) -> DistanceSpec:
        return DistanceSpec(self.covariate_metric, self.combine, self.epsilon,
                            self.big_m, self.xi, self.ridge)

    def fit(self, X, delta_z=None, delta_y=None):
        """Match the rows of ``X`` (or the units of a :class:`PanelDataset`)."""
        if isinstance(X, PanelDataset):
            ds = X
        else:
            if delta_z is None:
                raise ValidationError("delta_z is required when X is an array")
            ds = _panel_from_xz(X, delta_z, delta_y)
        dm = build_distance_matrix(ds, self._spec())
        m = match_units(dm, self.scale, self.max_exact_n)
        self.spec_ = dm.spec
        self.matching_ = m
        self.pairs_ = list(m.pairs)
        self.total_cost_ = m.total_cost
        self.excluded_ = list(m.excluded)
        self.matched_sample_ = to_matched_sample(m, ds)
        index = ds.index_of()
        labels = np.full(len(ds), -1, dtype=int)
        for k, (a, b) in enumerate(m.pairs):
            labels[index[a]] = labels[index[b]] = k
        self.labels_ = labels
        self.n_features_in_ = ds.n_covariates
        return self

    def fit_predict(self, X, delta_z=None, delta_y=None):
        return self.fit(X, delta_z, delta_y).labels_

    def transform(self, X=None):
        """Matched sample from the last fit (``X`` is ignored)."""
        check_is_fitted(self, "matched_sample_")
        return self.matched_sample_


class DIDRatioEstimator(BaseEstimator):
    """Matched-pair DID ratio with design-based variance and interval.

    Parameters
    ----------
    matcher : PairMatcher or None
        Used when ``fit`` receives unmatched data; a default
        :class:`PairMatcher` when ``None``.
    alpha : float
        Interval level is ``1 - alpha``; must lie in ``(0, 0.5)``.
    q_mode : {"intercept_only", "intercept_plus_covariate_means"}
    covariates : sequence of str or None
        Covariate means to put in ``Q``; all when ``None``.
    psi_y : {"identity", "log"}
    psi_z : {"difference", "log_ratio"}
    drop_zero_gap : float or None
        ``None`` makes a zero dose gap an error; a tolerance drops such pairs.

    Attributes
    ----------
    tau_hat_, s2_, se_ : float
    ci_ : tuple of float
    pair_stats_ : list of PairStatistics
    leverages_ : ndarray
    excluded_pairs_ : list of dict
    report_ : EstimateReport
    """

    def __init__(self, matcher=None, alpha=0.05, q_mode="intercept_only", covariates=None,
                 psi_y="identity", psi_z="difference", drop_zero_gap=None):
        self.matcher = matcher
        self.alpha = alpha
        self.q_mode = q_mode
        self.covariates = covariates
        self.psi_y = psi_y
        self.psi_z = psi_z
        self.drop_zero_gap = drop_zero_gap

    def _matched(self, X, delta_z, delta_y) -> MatchedSample:
        if isinstance(X, MatchedSample):
            return X
        matcher = clone(self.matcher) if self.matcher is not None else PairMatcher()
        if isinstance(X, PanelDataset):
            matcher.fit(X)
        else:
            if delta_z is None or delta_y is None:
                raise ValidationError("array input needs both delta_z and delta_y")
            matcher.fit(X, delta_z, delta_y)
        self.matcher_ = matcher
        return matcher.matched_sample_

    def fit(self, X, delta_z=None, delta_y=None):
        """Estimate from a matched sample, a panel, or arrays ``(X, delta_z, delta_y)``."""
        check_alpha(self.alpha)
        ms = self._matched(X, delta_z, delta_y)
        covs = None if self.covariates is None else tuple(self.covariates)
        report = estimate(
            ms,
            alpha=self.alpha,
            variance=VarianceSpec(self.q_mode, covs),
            estimand=EstimandSpec(self.psi_y, self.psi_z),
            drop_zero_gap=self.drop_zero_gap,
        )
        self.matched_sample_ = ms
        self.report_ = report
        self.tau_hat_ = report.tau_hat
        self.s2_ = report.s2
        self.se_ = report.se
        self.ci_ = report.ci
        self.pair_stats_ = report.pair_stats
        self.leverages_ = np.asarray(report.leverages)
        self.excluded_pairs_ = report.excluded_pairs
        return self

    def predict(self, delta_z_gap):
        """Implied outcome-change contrast ``tau_hat * gap`` for given dose gaps."""
        check_is_fitted(self, "tau_hat_")
        gap = np.asarray(delta_z_gap, dtype=float)
        return self.tau_hat_ * gap

    def confidence_interval(self, alpha=None):
        check_is_fitted(self, "tau_hat_")
        return confidence_interval(self.tau_hat_, self.s2_, self.alpha if alpha is None else alpha)

    def randomization_test(self, tau0=0.0, draws=None, random_state=None):
        """Sign-flip p-value for the sharp null of a constant ratio ``tau0``."""
        check_is_fitted(self, "matched_sample_")
        return randomization_test(self.matched_sample_, tau0, True, draws, random_state,
                                  drop_zero_gap=self.drop_zero_gap)
