"""Command-line entry point: ``didmatch {match,estimate,simulate,distance}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure. Errors are also written to stderr as one JSON object. Every
run writes ``<output stem>.config.json`` next to its main output with
the fully resolved settings.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import load_panel
from .distances import DistanceSpec, build_distance_matrix, covariate_distance, edge_cost_inputs
from .estimator import EstimandSpec, VarianceSpec, estimate
from .exceptions import DidMatchError, NumericError, ValidationError
from .matcher import balance_report, match_units, read_pairs_csv, to_matched_sample, write_pairs_csv
from .simulator import DEFAULT_BETA_GRID, SimulationConfig, coverage_study, run_bias_study

logger = logging.getLogger("didmatch")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _config_path(out: Path) -> Path:
    return out.with_name(out.stem + ".config.json")


def _effective(args, **extra) -> dict:
    conf = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
    conf.update(extra)
    conf["schema_version"] = "1"
    conf["version"] = __version__
    return conf


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_distance_flags(p):
    p.add_argument("--input", required=True, type=Path, help="panel CSV (id, z0, z1, y0, y1, covariates)")
    p.add_argument("--covariates", type=_name_list, default=None,
                   help="comma-separated covariate columns (default: all non-role columns)")
    p.add_argument("--distance", choices=("ratio", "penalty"), default="ratio",
                   help="how covariate distance and dose separation combine (default ratio)")
    p.add_argument("--metric", choices=("mahalanobis", "rank_mahalanobis", "euclidean"),
                   default="mahalanobis", help="covariate distance (default mahalanobis)")
    p.add_argument("--epsilon", type=float, default=None, help="ratio-mode offset (default 1%% of median gap)")
    p.add_argument("--big-m", type=float, default=None, help="penalty size (default 1000 x max covariate distance)")
    p.add_argument("--xi", type=float, default=None, help="penalty threshold (default median gap)")
    p.add_argument("--ridge", type=float, default=None, help="covariance ridge (default 1e-8 trace/K)")


def _spec(args) -> DistanceSpec:
    return DistanceSpec(args.metric, args.distance, args.epsilon, args.big_m, args.xi, args.ridge)


def cmd_distance(args) -> None:
    ds = load_panel(args.input, covariates=args.covariates)
    dm = build_distance_matrix(ds, _spec(args))
    dm.write_csv(args.out)
    _write_json(_config_path(args.out), _effective(args, resolved_spec=dm.spec.to_dict()))


def cmd_match(args) -> None:
    ds = load_panel(args.input, covariates=args.covariates)
    dm = build_distance_matrix(ds, _spec(args))
    m = match_units(dm, args.scale, args.max_exact_n)
    ms = to_matched_sample(m, ds)
    units, cov_inv = edge_cost_inputs(ds, dm.spec)
    lookup = {u.id: u for u in units}
    if ds.n_covariates:
        dists = [covariate_distance(lookup[p.unit_hi.id].x, lookup[p.unit_lo.id].x, dm.spec, cov_inv)
                 for p in ms.pairs]
    else:
        dists = [0.0] * len(ms)
    write_pairs_csv(ms, args.out, dists)
    balance = balance_report(ms).to_dict()
    balance.update({
        "schema_version": "1",
        "total_cost": m.total_cost,
        "objective_certificate": m.objective_certificate,
        "excluded_units": list(m.excluded),
        "warnings": list(ms.warnings),
    })
    balance_path = args.balance or args.out.with_name("balance.json")
    _write_json(balance_path, balance)
    _write_json(_config_path(args.out), _effective(args, resolved_spec=dm.spec.to_dict(),
                                                   balance=str(balance_path)))


def cmd_estimate(args) -> None:
    ms = read_pairs_csv(args.pairs)
    report = estimate(
        ms,
        alpha=args.alpha,
        variance=VarianceSpec(args.q_mode, args.q_covariates),
        estimand=EstimandSpec(args.psi_y, args.psi_z),
        drop_zero_gap=args.drop_zero_gap,
        randomization_null=args.randomization_null,
        draws=args.draws,
        random_state=args.seed,
    )
    _write_json(args.out, report.to_dict())
    _write_json(_config_path(args.out), _effective(args))


def cmd_simulate(args) -> None:
    cfg = SimulationConfig(
        n_units=args.n,
        beta=args.beta,
        seed=args.seed,
        replications=args.reps,
        heterogeneity=args.heterogeneity,
        violation=args.violation,
        covariate_metric=args.metric,
        combine=args.distance,
        parametric_covariates=not args.dose_only,
    )
    out = args.out
    if args.coverage:
        res = coverage_study(cfg, alpha=args.alpha, q_mode=args.q_mode, workers=args.workers)
        _write_json(out.with_suffix(".json") if out.suffix == ".csv" else out, res.to_dict())
    else:
        table = run_bias_study(cfg, args.beta_grid, workers=args.workers)
        table.write_csv(out)
        summary = table.to_dict()
        summary["checks"] = table.ordering_holds()
        _write_json(out.with_suffix(".json"), summary)
    # worker count does not change results, so it stays out of the dump
    conf = _effective(args, simulation=cfg.to_dict())
    conf.pop("workers", None)
    _write_json(_config_path(out), conf)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="didmatch", description="Matched-pair DID ratio estimation for general treatments.")
    parser.add_argument("--version", action="version", version=f"didmatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("distance", help="write the pairwise edge-cost matrix")
    _add_distance_flags(p)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("match", help="optimal non-bipartite matching of a panel")
    _add_distance_flags(p)
    p.add_argument("--out", required=True, type=Path, help="matched-pairs CSV")
    p.add_argument("--balance", type=Path, default=None, help="balance JSON (default balance.json beside --out)")
    p.add_argument("--scale", type=float, default=1e6, help="cost quantisation factor (default 1e6)")
    p.add_argument("--max-exact-n", type=int, default=5000, help="largest exactly solved size (default 5000)")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("estimate", help="DID ratio, variance, interval and optional p-value")
    p.add_argument("--pairs", required=True, type=Path, help="matched-pairs CSV from `match`")
    p.add_argument("--out", type=Path, default=Path("estimate.json"))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--q-mode", choices=("intercept_only", "intercept_plus_covariate_means"),
                   default="intercept_only")
    p.add_argument("--q-covariates", type=_name_list, default=None,
                   help="covariate means to include in Q (default all)")
    p.add_argument("--psi-y", choices=("identity", "log"), default="identity")
    p.add_argument("--psi-z", choices=("difference", "log_ratio"), default="difference")
    p.add_argument("--drop-zero-gap", type=float, nargs="?", const=1e-12, default=None,
                   metavar="TOL", help="drop pairs with gap < TOL (default TOL 1e-12) instead of failing")
    p.add_argument("--randomization-null", type=float, default=None, metavar="TAU0")
    p.add_argument("--draws", type=int, default=None,
                   help="Monte Carlo sign patterns (default: exact up to 20 pairs, else 10000)")
    p.add_argument("--seed", type=int, default=0, help="seed for Monte Carlo draws")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="bias table or coverage study on simulated panels")
    p.add_argument("--beta-grid", type=_float_list, default=list(DEFAULT_BETA_GRID))
    p.add_argument("--beta", type=float, default=1.5, help="effect size for --coverage")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("bias_table.csv"))
    p.add_argument("--coverage", action="store_true", help="run the coverage study instead")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--q-mode", choices=("intercept_only", "intercept_plus_covariate_means"),
                   default="intercept_only")
    p.add_argument("--heterogeneity", type=float, default=0.0, help="sd of unit-level slopes")
    p.add_argument("--violation", type=float, default=0.0,
                   help="extra period-1 confounder loading (breaks the design assumption)")
    p.add_argument("--distance", choices=("ratio", "penalty"), default="ratio")
    p.add_argument("--metric", choices=("mahalanobis", "rank_mahalanobis", "euclidean"),
                   default="mahalanobis")
    p.add_argument("--dose-only", action="store_true",
                   help="parametric comparator without covariates")
    p.set_defaults(func=cmd_simulate)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("DIDMATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "column", "index"):
        if hasattr(exc, attr):
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except ValidationError as exc:
        return _fail(exc, 1)
    except (NumericError, np.linalg.LinAlgError) as exc:
        return _fail(exc, 2)
    except (DidMatchError, OSError) as exc:
        return _fail(exc, 1)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
