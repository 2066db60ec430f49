"""Optimal non-bipartite matching of panel units.

:func:`solve_optimal` finds a minimum-total-cost perfect matching with
the blossom solver in :mod:`didmatch._blossom`; :func:`brute_force_match`
is an enumeration oracle for small instances. Real-valued costs are
quantised to integers before solving (``round(cost * scale)``), and the
reported totals are always recomputed from the original reals.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ._blossom import min_cost_perfect_matching
from .core import PanelDataset, PanelUnit
from .distances import DistanceMatrix
from .exceptions import SolverError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_SCALE = 1e6
# largest quantised cost; keeps doubled duals and slacks far from int64 overflow
_MAX_INT_COST = 2**50
PHANTOM_ID = "__phantom__"


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[str, str], ...]
    total_cost: float
    objective_certificate: str = "exact"
    excluded: tuple[str, ...] = ()
    scale: float | None = None

    def __len__(self):
        return len(self.pairs)

    def partner(self) -> dict[str, str]:
        out = {}
        for a, b in self.pairs:
            out[a] = b
            out[b] = a
        return out


def _canonical_pairs(ids: Sequence[str], mate: np.ndarray) -> tuple[tuple[str, str], ...]:
    pairs = []
    for i, j in enumerate(mate):
        if i < j:
            a, b = ids[i], ids[j]
            pairs.append((a, b) if a < b else (b, a))
    return tuple(sorted(pairs))


def matching_cost(dm: DistanceMatrix, pairs) -> float:
    idx = {i: k for k, i in enumerate(dm.ids)}
    return math.fsum(dm.costs[idx[a], idx[b]] for a, b in pairs)


def quantize_costs(costs: np.ndarray, scale: float = DEFAULT_SCALE) -> tuple[np.ndarray, float]:
    """Round ``costs * scale`` to int64.

    The scale is reduced by factors of 10 (with a warning) if the largest
    cost would not fit the solver's integer range.
    """
    costs = np.asarray(costs, dtype=float)
    top = float(costs.max()) if costs.size else 0.0
    while top * scale > _MAX_INT_COST:
        scale /= 10.0
        warnings.warn(f"costs too large for quantisation; reducing scale to {scale:g}")
    return np.rint(costs * scale).astype(np.int64), scale


def _check_solvable(dm: DistanceMatrix) -> None:
    if dm.n % 2:
        raise ValidationError(
            f"perfect matching needs an even number of units (got {dm.n}); use handle_odd"
        )
    if dm.n < 2:
        raise ValidationError("need at least two units to match")


def greedy_match(dm: DistanceMatrix) -> Matching:
    """Pair cheapest available edges first. Approximate; only for very large n."""
    _check_solvable(dm)
    n = dm.n
    iu, ju = np.triu_indices(n, 1)
    order = np.argsort(dm.costs[iu, ju], kind="stable")
    mate = np.full(n, -1)
    left = n
    for k in order:
        a, b = iu[k], ju[k]
        if mate[a] < 0 and mate[b] < 0:
            mate[a], mate[b] = b, a
            left -= 2
            if not left:
                break
    pairs = _canonical_pairs(dm.ids, mate)
    return Matching(pairs, matching_cost(dm, pairs), "greedy")


def solve_optimal(
    dm: DistanceMatrix,
    scale: float = DEFAULT_SCALE,
    max_exact_n: int = 5000,
) -> Matching:
    """Minimum-total-cost perfect matching of all units in ``dm``.

    Parameters
    ----------
    dm : DistanceMatrix
        Even number of units.
    scale : float
        Costs are rounded to integer multiples of ``1/scale`` for the solver.
    max_exact_n : int
        Above this size the exact solver's O(n^2) memory is too much and a
        greedy matching is returned instead, certified ``"greedy"``.
    """
    _check_solvable(dm)
    if dm.n > max_exact_n:
        warnings.warn(f"n={dm.n} exceeds max_exact_n={max_exact_n}; using greedy matching")
        return greedy_match(dm)
    int_costs, used_scale = quantize_costs(dm.costs, scale)
    try:
        mate = min_cost_perfect_matching(int_costs)
    except RuntimeError as exc:
        raise SolverError(str(exc)) from exc
    if not np.array_equal(mate[mate], np.arange(dm.n)) or (mate == np.arange(dm.n)).any():
        raise SolverError("solver returned an inconsistent matching")
    pairs = _canonical_pairs(dm.ids, mate)
    return Matching(pairs, matching_cost(dm, pairs), "exact", scale=used_scale)


def enumerate_perfect_matchings(n: int) -> Iterator[list[tuple[int, int]]]:
    """Yield every perfect matching of ``range(n)``; there are ``(n-1)!!`` of them."""

    def rec(rest):
        if not rest:
            yield []
            return
        a = rest[0]
        for k in range(1, len(rest)):
            for tail in rec(rest[1:k] + rest[k + 1:]):
                yield [(a, rest[k])] + tail

    if n % 2:
        return
    yield from rec(list(range(n)))


def brute_force_match(dm: DistanceMatrix) -> Matching:
    """Exhaustive minimum over all perfect matchings (n <= 12)."""
    _check_solvable(dm)
    if dm.n > 12:
        raise ValidationError(f"brute force refuses n={dm.n} > 12")
    best, best_total = None, math.inf
    for m in enumerate_perfect_matchings(dm.n):
        total = math.fsum(dm.costs[a, b] for a, b in m)
        if total < best_total:
            best, best_total = m, total
    mate = np.empty(dm.n, dtype=int)
    for a, b in best:
        mate[a], mate[b] = b, a
    pairs = _canonical_pairs(dm.ids, mate)
    return Matching(pairs, matching_cost(dm, pairs), "oracle")


def handle_odd(dm: DistanceMatrix) -> tuple[DistanceMatrix, str]:
    """Append a phantom node joined to every unit at cost 0.

    Whichever unit the solver pairs with the phantom is the one whose
    removal leaves the cheapest matching of the rest.
    """
    if dm.n % 2 == 0:
        raise ValidationError(f"handle_odd needs an odd number of units (got {dm.n})")
    phantom = PHANTOM_ID
    while phantom in dm.ids:
        phantom = "_" + phantom
    costs = np.zeros((dm.n + 1, dm.n + 1))
    costs[: dm.n, : dm.n] = dm.costs
    return DistanceMatrix(dm.ids + (phantom,), costs, dm.spec), phantom


def match_units(dm: DistanceMatrix, scale: float = DEFAULT_SCALE, max_exact_n: int = 5000) -> Matching:
    """Solve ``dm`` whether ``n`` is even or odd; odd sizes exclude one unit."""
    if dm.n % 2 == 0:
        return solve_optimal(dm, scale, max_exact_n)
    aug, phantom = handle_odd(dm)
    m = solve_optimal(aug, scale, max_exact_n)
    kept = tuple(p for p in m.pairs if phantom not in p)
    dropped = tuple(a if b == phantom else b for a, b in m.pairs if phantom in (a, b))
    logger.info("odd number of units; excluded %s (matched to phantom)", dropped)
    return Matching(kept, matching_cost(dm, kept), m.objective_certificate, dropped, m.scale)


@dataclass(frozen=True)
class MatchedPair:
    unit_hi: PanelUnit
    unit_lo: PanelUnit
    tied: bool = False

    @property
    def delta_z_hi(self) -> float:
        return self.unit_hi.delta_z

    @property
    def delta_z_lo(self) -> float:
        return self.unit_lo.delta_z

    @property
    def gap(self) -> float:
        return self.delta_z_hi - self.delta_z_lo


@dataclass(frozen=True)
class MatchedSample:
    pairs: tuple[MatchedPair, ...]
    covariate_names: tuple[str, ...] = ()
    excluded: tuple[str, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        seen = set()
        for p in self.pairs:
            for u in (p.unit_hi, p.unit_lo):
                if u.id in seen:
                    raise ValidationError(f"unit {u.id!r} appears in more than one pair")
                seen.add(u.id)

    def __len__(self):
        return len(self.pairs)

    @property
    def dz_hi(self) -> np.ndarray:
        return np.array([p.delta_z_hi for p in self.pairs], dtype=float)

    @property
    def dz_lo(self) -> np.ndarray:
        return np.array([p.delta_z_lo for p in self.pairs], dtype=float)

    @property
    def dy_hi(self) -> np.ndarray:
        return np.array([p.unit_hi.delta_y for p in self.pairs], dtype=float)

    @property
    def dy_lo(self) -> np.ndarray:
        return np.array([p.unit_lo.delta_y for p in self.pairs], dtype=float)

    @property
    def gaps(self) -> np.ndarray:
        return self.dz_hi - self.dz_lo

    @property
    def x_hi(self) -> np.ndarray:
        return np.array([p.unit_hi.x for p in self.pairs], dtype=float).reshape(len(self), -1)

    @property
    def x_lo(self) -> np.ndarray:
        return np.array([p.unit_lo.x for p in self.pairs], dtype=float).reshape(len(self), -1)

    @property
    def pair_ids(self) -> list[tuple[str, str]]:
        return [(p.unit_hi.id, p.unit_lo.id) for p in self.pairs]

    @classmethod
    def from_arrays(cls, dy_hi, dy_lo, dz_hi, dz_lo, x_hi=None, x_lo=None, covariate_names=None):
        """Build a sample directly from per-pair changes (period-0 values set to 0)."""
        dy_hi, dy_lo, dz_hi, dz_lo = (np.asarray(a, dtype=float) for a in (dy_hi, dy_lo, dz_hi, dz_lo))
        n = dy_hi.shape[0]
        x_hi = np.zeros((n, 0)) if x_hi is None else np.asarray(x_hi, dtype=float).reshape(n, -1)
        x_lo = np.zeros((n, 0)) if x_lo is None else np.asarray(x_lo, dtype=float).reshape(n, -1)
        if covariate_names is None:
            covariate_names = [f"x{k + 1}" for k in range(x_hi.shape[1])]
        pairs = []
        for i in range(n):
            hi = PanelUnit(f"p{i}h", tuple(x_hi[i]), 0.0, dz_hi[i], 0.0, dy_hi[i])
            lo = PanelUnit(f"p{i}l", tuple(x_lo[i]), 0.0, dz_lo[i], 0.0, dy_lo[i])
            pairs.append(MatchedPair(hi, lo, bool(dz_hi[i] == dz_lo[i])))
        return cls(tuple(pairs), tuple(covariate_names))


def order_pair(a: PanelUnit, b: PanelUnit) -> MatchedPair:
    """Put the unit with the larger dose change first; exact ties go to the smaller id."""
    if a.delta_z > b.delta_z:
        return MatchedPair(a, b)
    if b.delta_z > a.delta_z:
        return MatchedPair(b, a)
    hi, lo = (a, b) if a.id < b.id else (b, a)
    return MatchedPair(hi, lo, tied=True)


def to_matched_sample(m: Matching, ds: PanelDataset) -> MatchedSample:
    """Attach unit records to a matching and orient each pair high-to-low.

    Pairs with equal dose changes are kept but flagged; the estimator
    decides whether to drop them.
    """
    lookup = {u.id: u for u in ds.units}
    covered = {i for p in m.pairs for i in p} | set(m.excluded)
    missing = set(lookup) - covered
    if missing:
        raise ValidationError(f"matching does not cover units: {sorted(missing)[:5]}")
    pairs, notes = [], []
    for a, b in m.pairs:
        p = order_pair(lookup[a], lookup[b])
        if p.tied:
            msg = f"pair ({a}, {b}) has equal dose changes; {p.unit_hi.id} labelled high by id"
            logger.warning(msg)
            notes.append(msg)
        pairs.append(p)
    return MatchedSample(tuple(pairs), ds.covariate_names, tuple(m.excluded), tuple(notes))


@dataclass
class BalanceReport:
    n_pairs: int
    covariates: dict[str, dict[str, float | None]]
    gap_min: float
    gap_median: float
    gap_mean: float
    n_tied: int

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "covariates": self.covariates,
            "gap": {"min": self.gap_min, "median": self.gap_median, "mean": self.gap_mean},
            "n_tied": self.n_tied,
        }


def standardized_difference(a: np.ndarray, b: np.ndarray) -> float | None:
    """``(mean(a) - mean(b)) / sqrt((var(a) + var(b)) / 2)``, sample variances.

    ``None`` when the pooled spread is zero but the means differ.
    """
    ddof = 1 if a.size > 1 else 0
    num = float(np.mean(a) - np.mean(b))
    den = math.sqrt((np.var(a, ddof=ddof) + np.var(b, ddof=ddof)) / 2)
    if den == 0:
        return 0.0 if num == 0 else None
    return num / den


def balance_report(ms: MatchedSample) -> BalanceReport:
    if len(ms) < 1:
        raise ValidationError("balance_report needs at least one pair")
    xh, xl = ms.x_hi, ms.x_lo
    covs = {}
    for k, name in enumerate(ms.covariate_names):
        covs[name] = {
            "mean_abs_diff": float(np.mean(np.abs(xh[:, k] - xl[:, k]))),
            "std_mean_diff": standardized_difference(xh[:, k], xl[:, k]),
        }
    g = ms.gaps
    return BalanceReport(
        n_pairs=len(ms),
        covariates=covs,
        gap_min=float(g.min()),
        gap_median=float(np.median(g)),
        gap_mean=float(g.mean()),
        n_tied=sum(p.tied for p in ms.pairs),
    )


# ---------------------------------------------------------------- pairs CSV

def write_pairs_csv(ms: MatchedSample, path, covariate_distances: Sequence[float] | None = None) -> None:
    """Write the matched-pairs table consumed by ``didmatch estimate``.

    Columns: ``pair_index, id_hi, id_lo, gap, covariate_distance`` followed
    by both units' doses/outcomes and covariates, so the file alone is
    enough to rebuild the :class:`MatchedSample`.
    """
    names = list(ms.covariate_names)
    header = ["pair_index", "id_hi", "id_lo", "gap", "covariate_distance",
              "z0_hi", "z1_hi", "y0_hi", "y1_hi", "z0_lo", "z1_lo", "y0_lo", "y1_lo"]
    header += [f"{c}_hi" for c in names] + [f"{c}_lo" for c in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
        w.writerow(header)
        for i, p in enumerate(ms.pairs):
            h, lo = p.unit_hi, p.unit_lo
            dist = float(covariate_distances[i]) if covariate_distances is not None else float("nan")
            w.writerow([i, h.id, lo.id, p.gap, dist, h.z0, h.z1, h.y0, h.y1,
                        lo.z0, lo.z1, lo.y0, lo.y1, *h.x, *lo.x])


def read_pairs_csv(path) -> MatchedSample:
    from .core import _parse_float
    from .exceptions import SchemaError

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("pair_index", "pairs file is empty") from None
        fixed = ["id_hi", "id_lo", "z0_hi", "z1_hi", "y0_hi", "y1_hi",
                 "z0_lo", "z1_lo", "y0_lo", "y1_lo"]
        for c in fixed:
            if c not in header:
                raise SchemaError(c)
        pos = {h: i for i, h in enumerate(header)}
        names = [h[:-3] for h in header if h.endswith("_hi") and h not in fixed]
        for c in names:
            if f"{c}_lo" not in pos:
                raise SchemaError(f"{c}_lo")
        pairs = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            f = lambda c: _parse_float(row[pos[c]], r, c)  # noqa: E731
            hi = PanelUnit(row[pos["id_hi"]], tuple(f(f"{c}_hi") for c in names),
                           f("z0_hi"), f("z1_hi"), f("y0_hi"), f("y1_hi"))
            lo = PanelUnit(row[pos["id_lo"]], tuple(f(f"{c}_lo") for c in names),
                           f("z0_lo"), f("z1_lo"), f("y0_lo"), f("y1_lo"))
            if hi.delta_z < lo.delta_z:
                raise ValidationError(f"row {r}: id_hi has the smaller dose change")
            pairs.append(MatchedPair(hi, lo, tied=hi.delta_z == lo.delta_z))
    return MatchedSample(tuple(pairs), tuple(names))
