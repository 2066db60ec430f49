"""Design-based estimation and inference for the sample average DID ratio.

Within matched pair ``i`` the DID ratio is

    tau_hat_i = (dY_hi - dY_lo) / (dZ_hi - dZ_lo)

and ``tau_hat`` is their mean. Its variance is estimated by

    S^2(Q) = I^-2 * v' (Id - H_Q) v,   v_i = tau_hat_i / sqrt(1 - h_ii),

with ``H_Q`` the projection onto the columns of a fixed pair-level matrix
``Q``. Randomness is only over which unit of each pair received the
larger dose change, each orientation having probability 1/2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .exceptions import (
    ConfigError,
    DomainError,
    EstimationError,
    LeverageError,
    NumericError,
    ValidationError,
)
from .matcher import MatchedSample

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
PSI_Y = ("identity", "log")
PSI_Z = ("difference", "log_ratio")
Q_MODES = ("intercept_only", "intercept_plus_covariate_means")
LEVERAGE_LIMIT = 1 - 1e-10


@dataclass(frozen=True)
class EstimandSpec:
    """Outcome and dose transforms for the generalised DID-ratio estimand."""

    psi_y: str = "identity"
    psi_z: str = "difference"

    def __post_init__(self):
        if self.psi_y not in PSI_Y:
            raise ConfigError(f"psi_y must be one of {PSI_Y}, got {self.psi_y!r}")
        if self.psi_z not in PSI_Z:
            raise ConfigError(f"psi_z must be one of {PSI_Z}, got {self.psi_z!r}")

    @property
    def is_identity(self) -> bool:
        return self.psi_y == "identity" and self.psi_z == "difference"


@dataclass(frozen=True)
class VarianceSpec:
    q_mode: str = "intercept_only"
    selected_covariates: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.q_mode not in Q_MODES:
            raise ConfigError(f"q_mode must be one of {Q_MODES}, got {self.q_mode!r}")
        if self.selected_covariates is not None:
            object.__setattr__(self, "selected_covariates", tuple(self.selected_covariates))


@dataclass(frozen=True)
class PairStatistics:
    pair_index: int
    tau_hat_i: float
    num: float
    den: float
    id_hi: str = ""
    id_lo: str = ""

    def to_dict(self) -> dict:
        return {
            "pair_index": self.pair_index,
            "id_hi": self.id_hi,
            "id_lo": self.id_lo,
            "tau_hat_i": self.tau_hat_i,
            "num": self.num,
            "den": self.den,
        }


@dataclass
class EstimateReport:
    tau_hat: float
    pair_stats: list[PairStatistics]
    s2: float
    alpha: float
    ci: tuple[float, float]
    leverages: list[float]
    excluded_pairs: list[dict] = field(default_factory=list)
    estimand: EstimandSpec = field(default_factory=EstimandSpec)
    variance: VarianceSpec = field(default_factory=VarianceSpec)
    p_value: float | None = None
    tau0: float | None = None

    @property
    def se(self) -> float:
        return math.sqrt(self.s2)

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "tau_hat": self.tau_hat,
            "s2": self.s2,
            "se": self.se,
            "alpha": self.alpha,
            "ci": list(self.ci),
            "n_pairs": len(self.pair_stats),
            "psi_y": self.estimand.psi_y,
            "psi_z": self.estimand.psi_z,
            "q_mode": self.variance.q_mode,
            "leverages": list(self.leverages),
            "pair_stats": [p.to_dict() for p in self.pair_stats],
            "excluded_pairs": list(self.excluded_pairs),
        }
        if self.p_value is not None:
            out["randomization"] = {"tau0": self.tau0, "p_value": self.p_value}
        return out


# --------------------------------------------------------------- transforms

def _psi_y(values: np.ndarray, kind: str, where: str) -> np.ndarray:
    if kind == "identity":
        return values
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        raise DomainError(f"log outcome transform needs positive values; {where} {int(bad[0])}")
    return np.log(values)


def _psi_z(hi: np.ndarray, lo: np.ndarray, kind: str) -> np.ndarray:
    if kind == "difference":
        return hi - lo
    bad = np.flatnonzero(~((hi > 0) & (lo > 0)))
    if bad.size:
        raise DomainError(
            f"log_ratio dose transform needs positive dose changes; pair {int(bad[0])}"
        )
    return np.log(hi / lo)


def pair_contrasts(ms: MatchedSample, spec: EstimandSpec | None = None):
    """Per-pair numerator and denominator on the transformed scale."""
    spec = spec or EstimandSpec()
    num = _psi_y(ms.dy_hi, spec.psi_y, "pair") - _psi_y(ms.dy_lo, spec.psi_y, "pair")
    den = _psi_z(ms.dz_hi, ms.dz_lo, spec.psi_z)
    return num, den


def pair_did_ratio(p, index: int = 0) -> PairStatistics:
    """DID ratio of one :class:`~didmatch.matcher.MatchedPair`."""
    den = p.delta_z_hi - p.delta_z_lo
    if not den > 0:
        raise EstimationError(f"pair {index} has zero dose gap; the DID ratio is undefined")
    num = p.unit_hi.delta_y - p.unit_lo.delta_y
    return PairStatistics(index, num / den, num, den, p.unit_hi.id, p.unit_lo.id)


def pair_statistics(
    ms: MatchedSample,
    spec: EstimandSpec | None = None,
    drop_zero_gap: float | None = None,
) -> tuple[list[PairStatistics], list[dict]]:
    """Per-pair estimates plus the list of excluded pairs.

    ``drop_zero_gap=None`` makes a zero dose gap an error; a number ``tol``
    instead drops pairs whose gap is below ``tol`` and logs a warning,
    since that changes which pairs the estimand averages over.
    """
    spec = spec or EstimandSpec()
    gaps = ms.gaps
    ids = ms.pair_ids
    keep = np.ones(len(ms), dtype=bool)
    excluded = []
    if drop_zero_gap is None:
        bad = np.flatnonzero(~(gaps > 0))
        if bad.size:
            raise EstimationError(
                f"pair {int(bad[0])} {ids[bad[0]]} has zero dose gap; "
                "pass drop_zero_gap to exclude such pairs"
            )
    else:
        if drop_zero_gap < 0:
            raise ConfigError("drop_zero_gap tolerance must be >= 0")
        for i in np.flatnonzero(~(gaps >= drop_zero_gap) | ~(gaps > 0)):
            keep[i] = False
            excluded.append({"pair_index": int(i), "id_hi": ids[i][0], "id_lo": ids[i][1],
                             "reason": "zero dose gap"})
        if excluded:
            logger.warning("dropped %d pair(s) with dose gap below %g; the estimand now "
                           "averages over the remaining pairs only", len(excluded), drop_zero_gap)
    sub = MatchedSample(tuple(p for p, k in zip(ms.pairs, keep) if k), ms.covariate_names)
    num, den = pair_contrasts(sub, spec)
    if spec.psi_z != "difference":
        bad = np.flatnonzero(~(den > 0))
        if bad.size:
            raise DomainError(f"transformed dose contrast is not positive for pair {int(bad[0])}")
    index = np.flatnonzero(keep)
    stats = [
        PairStatistics(int(index[k]), float(num[k] / den[k]), float(num[k]), float(den[k]),
                       ids[index[k]][0], ids[index[k]][1])
        for k in range(len(sub))
    ]
    return stats, excluded


def estimate_tau(ms: MatchedSample, drop_zero_gap: float | None = None) -> float:
    """Mean of the within-pair DID ratios."""
    return estimate_theta(ms, EstimandSpec(), drop_zero_gap)


def estimate_theta(ms: MatchedSample, spec: EstimandSpec, drop_zero_gap: float | None = None) -> float:
    """Mean of ``[psi_y(dY_hi) - psi_y(dY_lo)] / psi_z(dZ_hi, dZ_lo)`` over pairs."""
    stats, _ = pair_statistics(ms, spec, drop_zero_gap)
    if not stats:
        raise EstimationError("no pairs left to estimate from")
    return float(np.mean([s.tau_hat_i for s in stats]))


# ----------------------------------------------------------------- variance

def build_Q(ms: MatchedSample, spec: VarianceSpec | None = None, rows: Sequence[int] | None = None) -> np.ndarray:
    """Pair-level design for the variance estimator.

    ``intercept_only`` gives a column of ones; otherwise the ones column is
    followed by the within-pair means of the selected covariates.
    ``rows`` restricts to the pairs actually used.
    """
    spec = spec or VarianceSpec()
    n_pairs = len(ms) if rows is None else len(rows)
    if spec.q_mode == "intercept_only":
        Q = np.ones((n_pairs, 1))
    else:
        names = list(ms.covariate_names)
        chosen = names if spec.selected_covariates is None else list(spec.selected_covariates)
        for c in chosen:
            if c not in names:
                raise ConfigError(f"unknown covariate {c!r} for Q")
        cols = [names.index(c) for c in chosen]
        means = (ms.x_hi + ms.x_lo) / 2
        if rows is not None:
            means = means[list(rows)]
        Q = np.column_stack([np.ones(n_pairs), means[:, cols]])
    if Q.shape[1] >= n_pairs:
        raise ValidationError(f"Q has {Q.shape[1]} columns but only {n_pairs} pairs; need L < I")
    if np.linalg.matrix_rank(Q) < Q.shape[1]:
        raise NumericError("Q is rank deficient; remove constant or collinear covariates")
    return Q


def projection_leverages(Q: np.ndarray, method: str = "auto") -> np.ndarray:
    """Diagonal of ``Q (Q'Q)^-1 Q'``.

    ``method="normal"`` uses the explicit inverse (exact 1/I for a ones
    column), ``"qr"`` an orthogonal factorisation; ``"auto"`` picks QR
    once Q has more than four columns.
    """
    Q = np.asarray(Q, dtype=float)
    if method == "auto":
        method = "qr" if Q.shape[1] > 4 else "normal"
    if method == "normal" and Q.shape[1] == 1:
        q = Q[:, 0]
        return q * q / float(q @ q)
    if method == "normal":
        G = np.linalg.inv(Q.T @ Q)
        return np.einsum("ij,jk,ik->i", Q, G, Q)
    if method == "qr":
        q, _ = np.linalg.qr(Q)
        return np.einsum("ij,ij->i", q, q)
    raise ConfigError(f"unknown projection method {method!r}")


def _residual(Q: np.ndarray, v: np.ndarray, method: str) -> np.ndarray:
    if method == "normal":
        return v - Q @ np.linalg.solve(Q.T @ Q, Q.T @ v)
    q, _ = np.linalg.qr(Q)
    return v - q @ (q.T @ v)


def variance_s2(tau_i, Q, method: str = "auto") -> tuple[float, np.ndarray]:
    """Return ``(S^2(Q), leverages)`` for per-pair estimates ``tau_i``.

    Raises :class:`LeverageError` if some ``h_ii`` is numerically 1.
    """
    tau_i = np.asarray(tau_i, dtype=float)
    Q = np.asarray(Q, dtype=float).reshape(tau_i.shape[0], -1)
    if method == "auto":
        method = "qr" if Q.shape[1] > 4 else "normal"
    h = projection_leverages(Q, method)
    bad = np.flatnonzero(h >= LEVERAGE_LIMIT)
    if bad.size:
        raise LeverageError(int(bad[0]), float(h[bad[0]]))
    v = tau_i / np.sqrt(1 - h)
    r = _residual(Q, v, method)
    n = tau_i.shape[0]
    return float(r @ r) / n**2, h


def normal_quantile(p: float) -> float:
    """Standard normal quantile (Wichura's AS241 via :class:`statistics.NormalDist`)."""
    return NormalDist().inv_cdf(p)


def check_alpha(alpha: float) -> float:
    if not 0 < alpha < 0.5:
        raise ConfigError("alpha must be in (0, 0.5)")
    return float(alpha)


def confidence_interval(tau_hat: float, s2: float, alpha: float = 0.05) -> tuple[float, float]:
    check_alpha(alpha)
    if not s2 >= 0:
        raise ValidationError("s2 must be >= 0")
    half = normal_quantile(1 - alpha / 2) * math.sqrt(s2)
    return tau_hat - half, tau_hat + half


# -------------------------------------------------------- randomization test

def _signed_sums(a: np.ndarray) -> np.ndarray:
    """All 2^I values of sum(s_i * a_i) over sign vectors s."""
    sums = np.zeros(1)
    for v in a:
        sums = np.concatenate([sums + v, sums - v])
    return sums


def randomization_test(
    ms: MatchedSample,
    tau0: float = 0.0,
    two_sided: bool = True,
    draws: int | None = None,
    random_state=None,
    exact_max: int = 20,
    drop_zero_gap: float | None = None,
) -> float:
    """Sign-flip p-value for the sharp null ``dY_hi - dY_lo = tau0 * gap`` in every pair.

    Under the null each residual ratio ``a_i = tau_hat_i - tau0`` is
    symmetric about 0, so ``sum(a)`` is compared against all (``I <=
    exact_max``) or ``draws`` random sign patterns. Monte Carlo p-values
    count the observed pattern, ``(1 + hits) / (1 + draws)``.
    """
    stats, _ = pair_statistics(ms, None, drop_zero_gap)
    if not stats:
        raise EstimationError("randomization test needs at least one pair")
    a = np.array([s.num - tau0 * s.den for s in stats]) / np.array([s.den for s in stats])
    return sign_flip_pvalue(a, two_sided, draws, random_state, exact_max)


def sign_flip_pvalue(a, two_sided=True, draws=None, random_state=None, exact_max=20) -> float:
    a = np.asarray(a, dtype=float)
    observed = a.sum()
    tol = 1e-12 * max(1.0, float(np.abs(a).sum()))
    if len(a) <= exact_max and draws is None:
        sums = _signed_sums(a)
        hits = (np.abs(sums) >= abs(observed) - tol) if two_sided else (sums >= observed - tol)
        return float(hits.mean())
    if draws is None or draws < 1000:
        raise ConfigError("Monte Carlo randomization test needs draws >= 1000")
    rng = np.random.default_rng(random_state)
    hits = 0
    chunk = max(1, min(draws, 2_000_000 // max(len(a), 1)))
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        signs = rng.integers(0, 2, size=(k, len(a)), dtype=np.int8) * 2 - 1
        sums = signs @ a
        hits += int(((np.abs(sums) >= abs(observed) - tol) if two_sided else (sums >= observed - tol)).sum())
        done += k
    return (1 + hits) / (1 + draws)


# ------------------------------------------------------------ full pipeline

def estimate(
    ms: MatchedSample,
    alpha: float = 0.05,
    variance: VarianceSpec | None = None,
    estimand: EstimandSpec | None = None,
    drop_zero_gap: float | None = None,
    randomization_null: float | None = None,
    draws: int | None = None,
    random_state=None,
) -> EstimateReport:
    """Point estimate, variance, confidence interval and optional p-value."""
    check_alpha(alpha)
    variance = variance or VarianceSpec()
    estimand = estimand or EstimandSpec()
    stats, excluded = pair_statistics(ms, estimand, drop_zero_gap)
    if not stats:
        raise EstimationError("no pairs left to estimate from")
    tau_i = np.array([s.tau_hat_i for s in stats])
    tau_hat = float(np.mean(tau_i))
    Q = build_Q(ms, variance, rows=[s.pair_index for s in stats])
    s2, h = variance_s2(tau_i, Q)
    report = EstimateReport(
        tau_hat=tau_hat,
        pair_stats=stats,
        s2=s2,
        alpha=alpha,
        ci=confidence_interval(tau_hat, s2, alpha),
        leverages=[float(v) for v in h],
        excluded_pairs=excluded,
        estimand=estimand,
        variance=variance,
    )
    if randomization_null is not None:
        if not estimand.is_identity:
            raise ConfigError("the randomization test is defined for the untransformed DID ratio")
        sub = MatchedSample(tuple(ms.pairs[s.pair_index] for s in stats), ms.covariate_names)
        if len(sub) > 20 and draws is None:
            draws = 10_000
        report.p_value = randomization_test(sub, randomization_null, True, draws, random_state)
        report.tau0 = float(randomization_null)
    return report


# ------------------------------------------------- potential-outcome oracles

@dataclass(frozen=True)
class PotentialOutcomeTable:
    """Both potential outcome changes of both units in every pair.

    ``dy_hi[i, j]`` is the outcome change unit ``j`` of pair ``i`` would
    show on the larger dose trajectory, ``dy_lo[i, j]`` on the smaller one.
    The pair's two dose changes ``dz_hi[i] > dz_lo[i]`` are fixed; only
    which unit receives which is random.
    """

    dy_hi: np.ndarray
    dy_lo: np.ndarray
    dz_hi: np.ndarray
    dz_lo: np.ndarray

    def __post_init__(self):
        dy_hi = np.asarray(self.dy_hi, dtype=float)
        dy_lo = np.asarray(self.dy_lo, dtype=float)
        dz_hi = np.asarray(self.dz_hi, dtype=float).ravel()
        dz_lo = np.asarray(self.dz_lo, dtype=float).ravel()
        n = dz_hi.shape[0]
        if dy_hi.shape != (n, 2) or dy_lo.shape != (n, 2) or dz_lo.shape != (n,):
            raise ValidationError("potential table needs dy arrays of shape (I, 2) and dz arrays of length I")
        if not (dz_hi > dz_lo).all():
            raise ValidationError("every pair needs dz_hi > dz_lo")
        for name, arr in (("dy_hi", dy_hi), ("dy_lo", dy_lo), ("dz_hi", dz_hi), ("dz_lo", dz_lo)):
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.dz_hi.shape[0]

    @property
    def gaps(self) -> np.ndarray:
        return self.dz_hi - self.dz_lo

    @property
    def tau_first(self) -> np.ndarray:
        """Pair estimate when unit 0 takes the larger dose change."""
        return (self.dy_hi[:, 0] - self.dy_lo[:, 1]) / self.gaps

    @property
    def tau_second(self) -> np.ndarray:
        """Pair estimate when unit 1 takes the larger dose change."""
        return (self.dy_hi[:, 1] - self.dy_lo[:, 0]) / self.gaps

    def tau(self) -> float:
        """Sample average DID ratio over all ``2I`` units."""
        unit = (self.dy_hi - self.dy_lo) / self.gaps[:, None]
        return float(unit.sum() / unit.size)

    def observe(self, first: Sequence[bool]) -> MatchedSample:
        """Observed matched sample for one assignment (``first[i]``: unit 0 is high)."""
        first = np.asarray(first, dtype=bool)
        j_hi = np.where(first, 0, 1)
        rows = np.arange(len(self))
        return MatchedSample.from_arrays(
            self.dy_hi[rows, j_hi], self.dy_lo[rows, 1 - j_hi], self.dz_hi, self.dz_lo
        )

    @classmethod
    def constant_effect(cls, base, dz_hi, dz_lo, beta: float) -> "PotentialOutcomeTable":
        """Table with ``dy_hi - dy_lo = beta * gap`` for every unit."""
        base = np.asarray(base, dtype=float)
        dz_hi = np.asarray(dz_hi, dtype=float)
        dz_lo = np.asarray(dz_lo, dtype=float)
        return cls(base + beta * (dz_hi - dz_lo)[:, None], base, dz_hi, dz_lo)


def _assignment_matrix(n: int) -> np.ndarray:
    """All ``2^n`` boolean assignments, one per row."""
    codes = np.arange(2**n, dtype=np.int64)[:, None]
    return ((codes >> np.arange(n)) & 1).astype(bool)


def enumerate_assignments(pot: PotentialOutcomeTable, Q=None, max_pairs: int = 16):
    """Estimator and variance estimate under every equiprobable assignment.

    Returns ``(tau_hat, s2)`` arrays of length ``2^I``; ``s2`` is ``None``
    when ``Q`` is not given.
    """
    n = len(pot)
    if n > max_pairs:
        raise ConfigError(f"exhaustive enumeration limited to {max_pairs} pairs, got {n}")
    first = _assignment_matrix(n)
    T = np.where(first, pot.tau_first, pot.tau_second)
    tau_hat = T.mean(axis=1)
    if Q is None:
        return tau_hat, None
    Q = np.asarray(Q, dtype=float).reshape(n, -1)
    h = projection_leverages(Q)
    if (h >= LEVERAGE_LIMIT).any():
        k = int(np.argmax(h))
        raise LeverageError(k, float(h[k]))
    V = T / np.sqrt(1 - h)
    R = np.eye(n) - Q @ np.linalg.solve(Q.T @ Q, Q.T)
    resid = V @ R
    return tau_hat, np.einsum("ij,ij->i", resid, resid) / n**2


def oracle_expectation(pot: PotentialOutcomeTable) -> tuple[float, float]:
    """``(tau, mean of tau_hat over all 2^I assignments)``; the two agree."""
    if len(pot) > 16:
        raise ConfigError("oracle_expectation is limited to 16 pairs")
    tau_hat, _ = enumerate_assignments(pot)
    return pot.tau(), float(math.fsum(tau_hat) / tau_hat.size)


def oracle_variance(pot: PotentialOutcomeTable, Q=None) -> dict:
    """Exact assignment variance of ``tau_hat`` against the mean of ``S^2(Q)``."""
    n = len(pot)
    Q = np.ones((n, 1)) if Q is None else Q
    tau_hat, s2 = enumerate_assignments(pot, Q)
    centre = math.fsum(tau_hat) / tau_hat.size
    return {
        "variance": float(math.fsum((tau_hat - centre) ** 2) / tau_hat.size),
        "mean_s2": float(math.fsum(s2) / s2.size),
        "closed_form_variance": float(np.sum(pair_moments(pot)["nu2"]) / n**2),
    }


def pair_moments(pot: PotentialOutcomeTable) -> dict:
    t1, t2 = pot.tau_first, pot.tau_second
    return {
        "tau_first": t1,
        "tau_second": t2,
        "M": np.abs(t1 - t2),
        "mu": (t1 + t2) / 2,
        "nu2": (t1 - t2) ** 2 / 4,
    }


@dataclass
class RegularityDiagnostics:
    n_pairs: int
    extreme_pair_ratio: float
    extreme_pair_index: int
    flagged: bool
    mean_M4: float
    mean_tau4: float
    mean_nu2: float
    mu_spread: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def regularity_diagnostics(pot: PotentialOutcomeTable, threshold: float | None = None) -> RegularityDiagnostics:
    """Finite-sample checks on how far a single pair dominates the design.

    The extreme-pair ratio ``max M_i^2 / sum M_i^2`` is flagged when it
    exceeds ``threshold`` (default ``max(0.1, 2 / I)``). When every
    ``M_i`` is 0 the ratio is reported as 0 and flagged, since the design
    then carries no assignment variation.
    """
    n = len(pot)
    if n < 2:
        raise ValidationError("regularity diagnostics need at least two pairs")
    m = pair_moments(pot)
    M2 = m["M"] ** 2
    total = float(M2.sum())
    threshold = max(0.1, 2.0 / n) if threshold is None else threshold
    notes = []
    if total == 0:
        ratio, idx, flagged = 0.0, -1, True
        notes.append("all pairs have M_i = 0; the estimator does not vary over assignments")
    else:
        idx = int(np.argmax(M2))
        ratio = float(M2[idx] / total)
        flagged = ratio > threshold
        if flagged:
            notes.append(f"pair {idx} dominates the assignment variance (ratio {ratio:.3g})")
    tau4 = np.concatenate([m["tau_first"], m["tau_second"]]) ** 4
    return RegularityDiagnostics(
        n_pairs=n,
        extreme_pair_ratio=ratio,
        extreme_pair_index=idx,
        flagged=flagged,
        mean_M4=float(np.mean(m["M"] ** 4)),
        mean_tau4=float(np.mean(tau4)),
        mean_nu2=float(np.mean(m["nu2"])),
        mu_spread=float(np.var(m["mu"])),
        notes=notes,
    )
