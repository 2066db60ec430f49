"""Simulation harness: data-generating process, comparator estimators, bias and coverage studies.

Each unit has covariates ``x ~ N(0, I_3)`` and a latent confounder
``u ~ N(0, 1)``. At period ``t``

    Z^t = f_z^t(x) + a_z^t u + e_z^t
    Y^t = beta_j Z^t + f_y^t(x) + a_y^t u + e_y^t

where ``f^t(x) = c_lin^t (x1 + x2 + x3) + c_nl^t (x1 x3 + x2 x3 + sin x1 +
cos x2 + exp(x3 / 3))``. With ``a^0 = a^1`` the confounder drops out of
both changes. ``beta_j = beta`` for every unit unless ``heterogeneity``
is positive, in which case ``beta_j = beta + heterogeneity * eta_j``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .core import PanelDataset
from .distances import DistanceSpec, build_distance_matrix
from .estimator import (
    PotentialOutcomeTable,
    VarianceSpec,
    check_alpha,
    estimate,
    estimate_tau,
)
from .exceptions import ConfigError, EstimationError, NumericError, ValidationError
from .matcher import MatchedSample, Matching, match_units, to_matched_sample

logger = logging.getLogger(__name__)

DEFAULT_BETA_GRID = (1.5, 2.0, 2.5, 3.0)
ESTIMATORS = ("did_ratio", "parametric", "dichotomized")


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of the data-generating process and study size.

    Coefficient pairs are ``(period 0, period 1)``. ``violation`` adds the
    same extra confounder loading to ``Z^1`` and ``Y^1`` only, so the
    confounder no longer cancels in the changes.
    """

    n_units: int = 2000
    beta: float = 1.5
    seed: int = 0
    replications: int = 200
    dose_loading: float = 0.3
    outcome_loading: float = 0.2
    noise_sd_z: float = 1.0
    noise_sd_y: float = 1.0
    z_linear: tuple[float, float] = (0.5, 0.8)
    z_nonlinear: tuple[float, float] = (0.5, 0.8)
    y_linear: tuple[float, float] = (0.5, 0.8)
    y_nonlinear: tuple[float, float] = (0.5, 0.8)
    heterogeneity: float = 0.0
    violation: float = 0.0
    covariate_metric: str = "mahalanobis"
    combine: str = "ratio"
    parametric_covariates: bool = True

    def __post_init__(self):
        if self.n_units < 4:
            raise ConfigError("n_units must be >= 4")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for name in ("z_linear", "z_nonlinear", "y_linear", "y_nonlinear"):
            val = tuple(float(v) for v in getattr(self, name))
            if len(val) != 2:
                raise ConfigError(f"{name} needs one coefficient per period")
            object.__setattr__(self, name, val)
        if self.noise_sd_z < 0 or self.noise_sd_y < 0 or self.heterogeneity < 0:
            raise ConfigError("standard deviations must be >= 0")
        DistanceSpec(self.covariate_metric, self.combine)

    @property
    def distance_spec(self) -> DistanceSpec:
        return DistanceSpec(self.covariate_metric, self.combine)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


def make_rng(seed: int, rep_index: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``(seed, rep_index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep_index)])))


def _features(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    lin = x1 + x2 + x3
    nl = x1 * x3 + x2 * x3 + np.sin(x1) + np.cos(x2) + np.exp(x3 / 3)
    return lin, nl


@dataclass(frozen=True)
class LatentDraw:
    """Everything random about one replication except the effect size."""

    x: np.ndarray
    u: np.ndarray
    z0: np.ndarray
    z1: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    eta: np.ndarray

    def slopes(self, beta: float, heterogeneity: float) -> np.ndarray:
        return beta + heterogeneity * self.eta


def draw_latent(cfg: SimulationConfig, rep_index: int) -> LatentDraw:
    """Covariates, confounder, doses and the dose-free outcome parts ``g^t``.

    The draw order is fixed so every replication sees the same stream
    whatever the effect size or heterogeneity setting.
    """
    rng = make_rng(cfg.seed, rep_index)
    n = cfg.n_units
    x = rng.standard_normal((n, 3))
    u = rng.standard_normal(n)
    ez = rng.standard_normal((2, n)) * cfg.noise_sd_z
    ey = rng.standard_normal((2, n)) * cfg.noise_sd_y
    eta = rng.standard_normal(n)
    lin, nl = _features(x)
    az = (cfg.dose_loading, cfg.dose_loading + cfg.violation)
    ay = (cfg.outcome_loading, cfg.outcome_loading + cfg.violation)
    z = [cfg.z_linear[t] * lin + cfg.z_nonlinear[t] * nl + az[t] * u + ez[t] for t in (0, 1)]
    g = [cfg.y_linear[t] * lin + cfg.y_nonlinear[t] * nl + ay[t] * u + ey[t] for t in (0, 1)]
    return LatentDraw(x, u, z[0], z[1], g[0], g[1], eta)


def assemble_panel(draw: LatentDraw, beta: float, heterogeneity: float = 0.0) -> PanelDataset:
    b = draw.slopes(beta, heterogeneity)
    y0 = b * draw.z0 + draw.g0
    y1 = b * draw.z1 + draw.g1
    return PanelDataset.from_arrays(draw.x, draw.z0, draw.z1, y0, y1)


def generate_panel(cfg: SimulationConfig, rep_index: int = 0) -> tuple[PanelDataset, LatentDraw]:
    """One simulated panel plus the latent quantities behind it."""
    draw = draw_latent(cfg, rep_index)
    return assemble_panel(draw, cfg.beta, cfg.heterogeneity), draw


def potential_table(
    ms: MatchedSample, draw: LatentDraw, beta: float, heterogeneity: float = 0.0
) -> PotentialOutcomeTable:
    """Potential outcome changes of every matched unit under both trajectories.

    Unit ``j = 0`` of each pair is the one observed on the larger dose
    change. A unit moved to the other trajectory keeps its own slope and
    dose-free outcome path; that is what consistency requires here.
    """
    index = {f"u{i:0{len(str(len(draw.u) - 1))}d}": i for i in range(len(draw.u))}
    hi = np.array([index[p.unit_hi.id] for p in ms.pairs])
    lo = np.array([index[p.unit_lo.id] for p in ms.pairs])
    b = draw.slopes(beta, heterogeneity)
    dg = draw.g1 - draw.g0
    dz_hi, dz_lo = ms.dz_hi, ms.dz_lo
    unit = np.column_stack([hi, lo])
    dy_hi = b[unit] * dz_hi[:, None] + dg[unit]
    dy_lo = b[unit] * dz_lo[:, None] + dg[unit]
    # observed changes must equal the potential changes at the realised trajectories
    if not (np.allclose(dy_hi[:, 0], ms.dy_hi, rtol=1e-12, atol=1e-9)
            and np.allclose(dy_lo[:, 1], ms.dy_lo, rtol=1e-12, atol=1e-9)):
        raise ValidationError("observed outcomes disagree with the potential outcome ledger")
    return PotentialOutcomeTable(dy_hi, dy_lo, dz_hi, dz_lo)


# ------------------------------------------------------------- comparators

def dichotomized_did(ds: PanelDataset) -> float:
    """Difference in mean outcome change between units above and at-or-below the median dose change."""
    if len(ds) < 4:
        raise ValidationError("dichotomized_did needs at least 4 units")
    dz, dy = ds.delta_z, ds.delta_y
    high = dz > np.median(dz)
    if high.all() or not high.any():
        raise EstimationError("median split leaves an empty group")
    return float(np.mean(dy[high]) - np.mean(dy[~high]))


def parametric_did(ds: PanelDataset, covariates: bool = True) -> float:
    """Least-squares coefficient on the dose change in a linear model for the outcome change.

    Parameters
    ----------
    ds : PanelDataset
    covariates : bool
        Include the baseline covariates as linear regressors (default);
        ``False`` regresses on the dose change alone.
    """
    k = ds.n_covariates if covariates else 0
    if len(ds) <= k + 2:
        raise ValidationError(f"parametric_did needs more than {k + 2} units")
    cols = [np.ones(len(ds)), ds.delta_z]
    if covariates and k:
        cols.extend(ds.X.T)
    A = np.column_stack(cols)
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise NumericError("parametric DID design matrix is singular (constant dose change?)")
    coef, *_ = np.linalg.lstsq(A, ds.delta_y, rcond=None)
    return float(coef[1])


# ------------------------------------------------------------- bias study

@dataclass(frozen=True)
class BiasRow:
    beta: float
    estimator: str
    mean_bias: float
    mc_se: float
    replications: int


@dataclass
class BiasTable:
    rows: list[BiasRow]
    config: dict = field(default_factory=dict)

    def cell(self, beta: float, estimator: str) -> BiasRow:
        for r in self.rows:
            if r.beta == beta and r.estimator == estimator:
                return r
        raise KeyError((beta, estimator))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
            w.writerow(["beta", "estimator", "mean_bias", "mc_se", "replications"])
            for r in self.rows:
                w.writerow([r.beta, r.estimator, r.mean_bias, r.mc_se, r.replications])

    def to_dict(self) -> dict:
        return {"schema_version": "1", "config": self.config, "rows": [asdict(r) for r in self.rows]}

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def ordering_holds(self) -> dict:
        """Check the expected bias ordering and the monotone dichotomized column."""
        betas = sorted({r.beta for r in self.rows})
        order = all(
            abs(self.cell(b, "did_ratio").mean_bias)
            < abs(self.cell(b, "parametric").mean_bias)
            < abs(self.cell(b, "dichotomized").mean_bias)
            for b in betas
        )
        dich = [self.cell(b, "dichotomized").mean_bias for b in betas]
        return {
            "ordering": order,
            "dichotomized_increasing": all(a < b for a, b in zip(dich, dich[1:])),
            "max_abs_did_ratio_bias": max(abs(self.cell(b, "did_ratio").mean_bias) for b in betas),
        }


def match_panel(ds: PanelDataset, spec: DistanceSpec | None = None) -> tuple[Matching, MatchedSample]:
    m = match_units(build_distance_matrix(ds, spec))
    return m, to_matched_sample(m, ds)


def _bias_replication(cfg: SimulationConfig, rep: int, betas: Sequence[float]) -> np.ndarray:
    """Biases for one replication, shape ``(len(betas), 3)`` in ``ESTIMATORS`` order."""
    draw = draw_latent(cfg, rep)
    # doses and covariates do not depend on beta, so one matching serves the whole grid
    m, _ = match_panel(assemble_panel(draw, betas[0], cfg.heterogeneity), cfg.distance_spec)
    out = np.empty((len(betas), len(ESTIMATORS)))
    for k, beta in enumerate(betas):
        ds = assemble_panel(draw, beta, cfg.heterogeneity)
        ms = to_matched_sample(m, ds)
        pot = potential_table(ms, draw, beta, cfg.heterogeneity)
        out[k, 0] = estimate_tau(ms) - pot.tau()
        out[k, 1] = parametric_did(ds, cfg.parametric_covariates) - beta
        out[k, 2] = dichotomized_did(ds) - beta
    return out


def _run_parallel(func, reps: Sequence[int], workers: int):
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if workers == 1:
        return [func(r) for r in reps]
    return Parallel(n_jobs=workers)(delayed(func)(r) for r in reps)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, float("nan")
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def run_bias_study(
    cfg: SimulationConfig,
    betas: Sequence[float] = DEFAULT_BETA_GRID,
    workers: int = 1,
) -> BiasTable:
    """Mean bias of the three estimators over ``cfg.replications`` panels per effect size.

    The DID ratio is compared with the finite-population DID ratio of its
    own matched sample; the comparators with ``beta``.
    """
    betas = [float(b) for b in betas]
    if not betas:
        raise ConfigError("beta grid is empty")
    results = _run_parallel(
        lambda r: _bias_replication(cfg, r, betas), range(cfg.replications), workers
    )
    arr = np.stack(results)  # reps x betas x estimators
    rows = []
    for k, beta in enumerate(betas):
        for e, name in enumerate(ESTIMATORS):
            mean, se = _mean_se(arr[:, k, e])
            rows.append(BiasRow(beta, name, mean, se, cfg.replications))
    conf = cfg.to_dict()
    conf["beta_grid"] = betas
    return BiasTable(rows, conf)


# ---------------------------------------------------------- coverage study

@dataclass
class CoverageResult:
    coverage: float
    mc_se: float
    replications: int
    alpha: float
    mean_tau_hat_error: float
    mean_se: float
    empirical_sd: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": "1", **asdict(self)}


def _coverage_replication(cfg: SimulationConfig, rep: int, alpha: float, q_mode: str):
    ds, draw = generate_panel(cfg, rep)
    _, ms = match_panel(ds, cfg.distance_spec)
    pot = potential_table(ms, draw, cfg.beta, cfg.heterogeneity)
    tau = pot.tau()
    rep_ = estimate(ms, alpha=alpha, variance=VarianceSpec(q_mode))
    lo, hi = rep_.ci
    return float(lo <= tau <= hi), rep_.tau_hat - tau, math.sqrt(rep_.s2)


def coverage_study(
    cfg: SimulationConfig,
    alpha: float = 0.05,
    q_mode: str = "intercept_only",
    workers: int = 1,
    min_replications: int = 500,
) -> CoverageResult:
    """Share of replications whose interval covers that replication's finite-population DID ratio."""
    check_alpha(alpha)
    if cfg.replications < min_replications:
        raise ConfigError(f"coverage_study needs at least {min_replications} replications")
    res = np.array(_run_parallel(
        lambda r: _coverage_replication(cfg, r, alpha, q_mode), range(cfg.replications), workers
    ))
    cov, se = _mean_se(res[:, 0])
    err_mean, _ = _mean_se(res[:, 1])
    return CoverageResult(
        coverage=cov,
        mc_se=math.sqrt(cov * (1 - cov) / len(res)),
        replications=len(res),
        alpha=alpha,
        mean_tau_hat_error=err_mean,
        mean_se=float(np.mean(res[:, 2])),
        empirical_sd=float(np.std(res[:, 1], ddof=1)),
        config=cfg.to_dict(),
    )
