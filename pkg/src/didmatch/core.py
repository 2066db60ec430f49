"""Two-period panel data: unit records, CSV ingestion and validation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ParseError, SchemaError, ValidationError

REQUIRED_COLUMNS = ("id", "z0", "z1", "y0", "y1")


@dataclass(frozen=True)
class PanelUnit:
    """One unit observed at two periods.

    ``delta_z`` and ``delta_y`` are derived on access, so they can never
    disagree with the stored doses and outcomes.
    """

    id: str
    x: tuple[float, ...]
    z0: float
    z1: float
    y0: float
    y1: float

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        for name in ("z0", "z1", "y0", "y1"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def delta_z(self) -> float:
        return self.z1 - self.z0

    @property
    def delta_y(self) -> float:
        return self.y1 - self.y0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.z0, self.z1, self.y0, self.y1, *self.x))


def derive_deltas(u: PanelUnit) -> tuple[float, float]:
    """Return ``(z1 - z0, y1 - y0)`` for a unit with finite fields."""
    if not all(math.isfinite(v) for v in (u.z0, u.z1, u.y0, u.y1)):
        raise ValidationError(f"unit {u.id!r} has non-finite dose or outcome")
    return u.z1 - u.z0, u.y1 - u.y0


@dataclass(frozen=True)
class PanelDataset:
    units: tuple[PanelUnit, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "covariate_names", tuple(str(c) for c in self.covariate_names))
        k = len(self.covariate_names)
        seen = set()
        for u in self.units:
            if len(u.x) != k:
                raise ValidationError(
                    f"unit {u.id!r} has {len(u.x)} covariates, expected {k}"
                )
            if u.id in seen:
                raise ValidationError(f"duplicate unit id {u.id!r}")
            seen.add(u.id)

    def __len__(self):
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_names)

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    @property
    def X(self) -> np.ndarray:
        return np.array([u.x for u in self.units], dtype=float).reshape(len(self), self.n_covariates)

    @property
    def delta_z(self) -> np.ndarray:
        return np.array([u.delta_z for u in self.units], dtype=float)

    @property
    def delta_y(self) -> np.ndarray:
        return np.array([u.delta_y for u in self.units], dtype=float)

    def index_of(self) -> dict[str, int]:
        return {u.id: i for i, u in enumerate(self.units)}

    def subset(self, ids: Iterable[str]) -> "PanelDataset":
        lookup = {u.id: u for u in self.units}
        return PanelDataset(tuple(lookup[i] for i in ids), self.covariate_names)

    def replace_covariates(self, X: np.ndarray) -> "PanelDataset":
        X = np.asarray(X, dtype=float).reshape(len(self), self.n_covariates)
        units = tuple(
            PanelUnit(u.id, tuple(row), u.z0, u.z1, u.y0, u.y1) for u, row in zip(self.units, X)
        )
        return PanelDataset(units, self.covariate_names)

    @classmethod
    def from_arrays(cls, X, z0, z1, y0, y1, ids=None, covariate_names=None) -> "PanelDataset":
        z0 = np.asarray(z0, dtype=float)
        n = z0.shape[0]
        X = np.asarray(X if X is not None else np.empty((n, 0)), dtype=float).reshape(n, -1)
        if ids is None:
            width = len(str(max(n - 1, 0)))
            ids = [f"u{i:0{width}d}" for i in range(n)]
        if covariate_names is None:
            covariate_names = [f"x{k + 1}" for k in range(X.shape[1])]
        units = tuple(
            PanelUnit(ids[i], tuple(X[i]), z0[i], z1[i], y0[i], y1[i]) for i in range(n)
        )
        return cls(units, tuple(covariate_names))


def check_finite(ds: PanelDataset) -> None:
    """Raise :class:`ValidationError` naming the first unit with a NaN/Inf field."""
    for u in ds.units:
        if not u.is_finite():
            raise ValidationError(f"unit {u.id!r} has non-finite values")


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(row, column, text) from None


def load_panel(
    path,
    schema: Mapping[str, str] | None = None,
    covariates: Sequence[str] | None = None,
) -> PanelDataset:
    """Read a two-period panel from a comma-separated UTF-8 file.

    Parameters
    ----------
    path : path-like
        CSV file with a header row.
    schema : mapping, optional
        Maps the roles ``id, z0, z1, y0, y1`` to column names in the file;
        roles not given use their own name.
    covariates : sequence of str, optional
        Covariate columns to keep. By default every column that is not a
        role column is a covariate, in header order.

    Raises
    ------
    SchemaError
        A role or requested covariate column is absent.
    ParseError
        A numeric cell does not parse; carries the 1-based data row.
    ValidationError
        Duplicate ids.
    """
    roles = {r: r for r in REQUIRED_COLUMNS}
    if schema:
        unknown = set(schema) - set(REQUIRED_COLUMNS)
        if unknown:
            raise ValidationError(f"unknown schema roles: {sorted(unknown)}")
        roles.update(schema)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("id", "file is empty; expected a header row") from None
        for role in REQUIRED_COLUMNS:
            if roles[role] not in header:
                raise SchemaError(roles[role])
        role_cols = set(roles.values())
        if covariates is None:
            cov_names = [h for h in header if h not in role_cols]
        else:
            cov_names = list(covariates)
            for c in cov_names:
                if c not in header:
                    raise SchemaError(c)
        pos = {h: i for i, h in enumerate(header)}
        units = []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"row {rownum}: expected {len(header)} fields, got {len(row)}"
                )
            vals = {
                role: _parse_float(row[pos[roles[role]]], rownum, roles[role])
                for role in ("z0", "z1", "y0", "y1")
            }
            x = tuple(_parse_float(row[pos[c]], rownum, c) for c in cov_names)
            units.append(PanelUnit(row[pos[roles["id"]]], x, **vals))
    return PanelDataset(tuple(units), tuple(cov_names))


def write_panel(ds: PanelDataset, path) -> None:
    """Write ``ds`` so that :func:`load_panel` reproduces it bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
        w.writerow(["id", *ds.covariate_names, "z0", "z1", "y0", "y1"])
        for u in ds.units:
            w.writerow([u.id, *u.x, u.z0, u.z1, u.y0, u.y1])


@dataclass
class ValidationReport:
    n_units: int
    n_covariates: int
    delta_z_min: float | None
    delta_z_max: float | None
    stayer_count: int
    nonfinite: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.nonfinite

    def to_dict(self) -> dict:
        return {
            "n_units": self.n_units,
            "n_covariates": self.n_covariates,
            "delta_z_min": self.delta_z_min,
            "delta_z_max": self.delta_z_max,
            "stayer_count": self.stayer_count,
            "nonfinite": [{"id": i, "field": f} for i, f in self.nonfinite],
        }


def validate_panel(ds: PanelDataset) -> ValidationReport:
    """Summarise a dataset and flag every non-finite field.

    Stayers (units with ``delta_z == 0``) are only counted; nothing in the
    matching design requires them.
    """
    flags = []
    for u in ds.units:
        for name in ("z0", "z1", "y0", "y1"):
            if not math.isfinite(getattr(u, name)):
                flags.append((u.id, name))
        for cname, v in zip(ds.covariate_names, u.x):
            if not math.isfinite(v):
                flags.append((u.id, cname))
    dz = [u.delta_z for u in ds.units if math.isfinite(u.delta_z)]
    return ValidationReport(
        n_units=len(ds),
        n_covariates=ds.n_covariates,
        delta_z_min=min(dz) if dz else None,
        delta_z_max=max(dz) if dz else None,
        stayer_count=sum(1 for v in dz if v == 0.0),
        nonfinite=flags,
    )
