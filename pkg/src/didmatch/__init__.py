"""Non-bipartite matching and design-based DID-ratio estimation for general (continuous, multi-valued) treatments."""

__version__ = "0.1.0"

from .core import PanelDataset, PanelUnit, load_panel, validate_panel, write_panel
from .distances import DistanceMatrix, DistanceSpec, build_distance_matrix
from .estimator import (
    EstimandSpec,
    EstimateReport,
    PotentialOutcomeTable,
    VarianceSpec,
    confidence_interval,
    estimate,
    estimate_tau,
    estimate_theta,
    oracle_expectation,
    randomization_test,
    regularity_diagnostics,
    variance_s2,
)
from .estimators import DIDRatioEstimator, PairMatcher
from .exceptions import DidMatchError, NumericError, ValidationError
from .matcher import MatchedSample, Matching, brute_force_match, match_units, solve_optimal, to_matched_sample
from .simulator import SimulationConfig, coverage_study, generate_panel, run_bias_study

__all__ = [
    "DIDRatioEstimator",
    "DidMatchError",
    "DistanceMatrix",
    "DistanceSpec",
    "EstimandSpec",
    "EstimateReport",
    "MatchedSample",
    "Matching",
    "NumericError",
    "PairMatcher",
    "PanelDataset",
    "PanelUnit",
    "PotentialOutcomeTable",
    "SimulationConfig",
    "ValidationError",
    "VarianceSpec",
    "brute_force_match",
    "build_distance_matrix",
    "confidence_interval",
    "coverage_study",
    "estimate",
    "estimate_tau",
    "estimate_theta",
    "generate_panel",
    "load_panel",
    "match_units",
    "oracle_expectation",
    "randomization_test",
    "regularity_diagnostics",
    "run_bias_study",
    "solve_optimal",
    "to_matched_sample",
    "validate_panel",
    "variance_s2",
    "write_panel",
]
