"""Pairwise edge costs for the non-bipartite matching design.

An edge cost combines a covariate distance (small is good: units look
alike) with the separation of the two units' dose changes (large is
good: the pair carries a usable contrast). Two combinations are offered:

``ratio``
    ``delta_x / (delta_z + epsilon)``
``penalty``
    ``delta_x + big_m * 1{|dz_a - dz_b| <= xi}``
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import rankdata

from .core import PanelDataset, PanelUnit, check_finite
from .exceptions import ConfigError, NumericError, ValidationError

COVARIATE_METRICS = ("mahalanobis", "rank_mahalanobis", "euclidean")
COMBINE_MODES = ("ratio", "penalty")


@dataclass(frozen=True)
class DistanceSpec:
    """How edge costs are built.

    ``epsilon``, ``big_m``, ``xi`` and ``ridge`` may be left as ``None``;
    :func:`resolve_spec` then fills in data-scaled defaults.
    """

    covariate_metric: str = "mahalanobis"
    combine: str = "ratio"
    epsilon: float | None = None
    big_m: float | None = None
    xi: float | None = None
    ridge: float | None = None

    def __post_init__(self):
        if self.covariate_metric not in COVARIATE_METRICS:
            raise ConfigError(
                f"covariate_metric must be one of {COVARIATE_METRICS}, got {self.covariate_metric!r}"
            )
        if self.combine not in COMBINE_MODES:
            raise ConfigError(f"combine must be one of {COMBINE_MODES}, got {self.combine!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if self.big_m is not None and not self.big_m > 0:
            raise ConfigError("big_m must be > 0")
        if self.xi is not None and not self.xi >= 0:
            raise ConfigError("xi must be >= 0")
        if self.ridge is not None and not self.ridge >= 0:
            raise ConfigError("ridge must be >= 0")

    @property
    def resolved(self) -> bool:
        if self.combine == "ratio":
            return self.epsilon is not None
        return self.big_m is not None and self.xi is not None

    def to_dict(self) -> dict:
        return {
            "covariate_metric": self.covariate_metric,
            "combine": self.combine,
            "epsilon": self.epsilon,
            "big_m": self.big_m,
            "xi": self.xi,
            "ridge": self.ridge,
        }


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric edge-cost table; the diagonal is stored as 0 and never used."""

    ids: tuple[str, ...]
    costs: np.ndarray
    spec: DistanceSpec | None = None

    def __post_init__(self):
        costs = np.array(self.costs, dtype=float)
        n = len(self.ids)
        if costs.shape != (n, n):
            raise ValidationError(f"cost matrix shape {costs.shape} does not match {n} ids")
        np.fill_diagonal(costs, 0.0)
        if not np.isfinite(costs).all():
            raise ValidationError("cost matrix has non-finite entries")
        if (costs < 0).any():
            raise ValidationError("cost matrix has negative entries")
        if not np.array_equal(costs, costs.T):
            raise ValidationError("cost matrix is not symmetric")
        costs.setflags(write=False)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "costs", costs)

    @property
    def n(self) -> int:
        return len(self.ids)

    def cost(self, a: str, b: str) -> float:
        idx = {i: k for k, i in enumerate(self.ids)}
        return float(self.costs[idx[a], idx[b]])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
            w.writerow(["id", *self.ids])
            for i, row in zip(self.ids, self.costs):
                w.writerow([i, *(float(v) for v in row)])


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, PanelDataset):
        return data.X
    return np.asarray(data, dtype=float)


def default_ridge(X: np.ndarray) -> float:
    """``1e-8 * trace(cov) / K``, the default covariance regulariser."""
    X = np.asarray(X, dtype=float)
    k = X.shape[1]
    if k == 0 or X.shape[0] < 2:
        return 0.0
    return 1e-8 * float(np.trace(np.atleast_2d(np.cov(X, rowvar=False)))) / k


def covariance_inverse(data, ridge: float = 0.0) -> np.ndarray:
    """Inverse of the sample covariance (divisor N-1) plus ``ridge * I``.

    Raises
    ------
    NumericError
        If the regularised covariance is singular to working precision.
    """
    X = _as_matrix(data)
    n, k = X.shape
    if n < 2 or k < 1:
        raise ValidationError("covariance_inverse needs N >= 2 and K >= 1")
    cov = np.atleast_2d(np.cov(X, rowvar=False)) + ridge * np.eye(k)
    # condition check stands in for exact singularity, which floats rarely hit
    if not np.isfinite(cov).all() or np.linalg.cond(cov) > 1e12:
        raise NumericError(
            f"covariate covariance (+ ridge={ridge:g}) is singular or nearly so; "
            "use a larger ridge or drop collinear covariates"
        )
    inv = np.linalg.inv(cov)
    return (inv + inv.T) / 2


def rank_transform(ds: PanelDataset) -> PanelDataset:
    """Replace each covariate column by its ranks 1..N, ties sharing the average rank."""
    if len(ds) == 0 or ds.n_covariates == 0:
        return ds
    ranks = np.column_stack([rankdata(col, method="average") for col in ds.X.T])
    return ds.replace_covariates(ranks)


def covariate_distance(x1, x2, spec: DistanceSpec, cov_inv=None) -> float:
    """Covariate dissimilarity between two units.

    Mahalanobis variants return the quadratic form itself, not its square
    root. For ``rank_mahalanobis`` the inputs must already be ranks and
    ``cov_inv`` the inverse covariance of the ranks.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape or x1.ndim != 1:
        raise ValidationError(f"covariate vectors differ in shape: {x1.shape} vs {x2.shape}")
    diff = x1 - x2
    if spec.covariate_metric == "euclidean":
        return float(diff @ diff)
    if cov_inv is None:
        raise ValidationError(f"{spec.covariate_metric} needs an inverse covariance")
    cov_inv = np.asarray(cov_inv, dtype=float)
    if cov_inv.shape != (diff.size, diff.size):
        raise ValidationError("inverse covariance does not match covariate dimension")
    return float(diff @ cov_inv @ diff)


def treatment_separation(d1: float, d2: float) -> float:
    return abs(d1 - d2)


def combine_cost(delta_x, delta_z_gap, spec: DistanceSpec):
    """Apply the ratio or penalty combination; works on scalars and arrays."""
    if not spec.resolved:
        raise ConfigError("distance spec has unresolved defaults; call resolve_spec first")
    if spec.combine == "ratio":
        return delta_x / (delta_z_gap + spec.epsilon)
    return delta_x + spec.big_m * (delta_z_gap <= spec.xi)


def edge_cost(u1: PanelUnit, u2: PanelUnit, spec: DistanceSpec, cov_inv=None) -> float:
    """Cost of pairing two units under a resolved spec.

    With no covariates the ratio mode uses ``delta_x = 1`` so the cost
    still ranks pairs by dose-change separation; penalty mode uses 0.
    """
    if u1.id == u2.id:
        raise ValidationError("edge_cost needs two distinct units")
    if len(u1.x) == 0:
        dx = 1.0 if spec.combine == "ratio" else 0.0
    else:
        dx = covariate_distance(u1.x, u2.x, spec, cov_inv)
    gap = treatment_separation(u1.delta_z, u2.delta_z)
    return float(combine_cost(dx, gap, spec))


def _pairwise_covariate(X: np.ndarray, spec: DistanceSpec, cov_inv) -> np.ndarray:
    """Condensed vector of covariate distances over all i < j."""
    n, k = X.shape
    if k == 0:
        return np.full(n * (n - 1) // 2, 1.0 if spec.combine == "ratio" else 0.0)
    if spec.covariate_metric == "euclidean":
        return pdist(X, "sqeuclidean")
    # whiten with a Cholesky factor of the inverse covariance
    L = np.linalg.cholesky(cov_inv)
    return pdist(X @ L, "sqeuclidean")


def _prepare(ds: PanelDataset, spec: DistanceSpec):
    X = ds.X
    if spec.covariate_metric == "rank_mahalanobis" and ds.n_covariates:
        X = rank_transform(ds).X
    cov_inv = None
    ridge = spec.ridge
    if spec.covariate_metric != "euclidean" and ds.n_covariates:
        if ridge is None:
            ridge = default_ridge(X)
        cov_inv = covariance_inverse(X, ridge)
    return X, cov_inv, ridge


def resolve_spec(ds: PanelDataset, spec: DistanceSpec | None = None) -> DistanceSpec:
    """Fill unset tuning constants with data-scaled defaults.

    * ``epsilon = 0.01 * median pairwise |dz gap|`` (1 when that median is 0)
    * ``big_m = 1000 * max pairwise delta_x`` (1 when all are 0)
    * ``xi = median pairwise |dz gap|``
    * ``ridge = 1e-8 * trace(cov) / K``
    """
    spec = spec or DistanceSpec()
    X, cov_inv, ridge = _prepare(ds, spec)
    dz = ds.delta_z
    gaps = pdist(dz.reshape(-1, 1), "cityblock") if len(ds) >= 2 else np.zeros(0)
    med_gap = float(np.median(gaps)) if gaps.size else 0.0
    updates = {"ridge": ridge}
    if spec.epsilon is None:
        updates["epsilon"] = 0.01 * (med_gap if med_gap > 0 else 1.0)
    if spec.combine == "penalty":
        if spec.big_m is None:
            dx = _pairwise_covariate(X, spec, cov_inv)
            mx = float(dx.max()) if dx.size else 0.0
            updates["big_m"] = 1000.0 * (mx if mx > 0 else 1.0)
        if spec.xi is None:
            updates["xi"] = med_gap
    return replace(spec, **updates)


def build_distance_matrix(ds: PanelDataset, spec: DistanceSpec | None = None) -> DistanceMatrix:
    """All pairwise edge costs for ``ds``.

    Covariance (for Mahalanobis variants) is estimated once on the full
    dataset. Returns a :class:`DistanceMatrix` carrying the resolved spec.
    """
    if len(ds) < 2:
        raise ValidationError("need at least two units to build a distance matrix")
    check_finite(ds)
    spec = resolve_spec(ds, spec)
    X, cov_inv, _ = _prepare(ds, spec)
    dx = _pairwise_covariate(X, spec, cov_inv)
    gaps = pdist(ds.delta_z.reshape(-1, 1), "cityblock")
    costs = squareform(np.asarray(combine_cost(dx, gaps, spec), dtype=float), checks=False)
    return DistanceMatrix(tuple(ds.ids), costs, spec)


def edge_cost_inputs(ds: PanelDataset, spec: DistanceSpec):
    """Units and inverse covariance exactly as :func:`build_distance_matrix` sees them.

    Useful for recomputing single entries with :func:`edge_cost`.
    """
    X, cov_inv, _ = _prepare(ds, spec)
    if spec.covariate_metric == "rank_mahalanobis" and ds.n_covariates:
        ds = ds.replace_covariates(X)
    return ds, cov_inv
