import math

import numpy as np
import pytest

from didmatch.core import (
    PanelDataset,
    PanelUnit,
    derive_deltas,
    load_panel,
    validate_panel,
    write_panel,
)
from didmatch.exceptions import ParseError, SchemaError, ValidationError


def test_deltas_from_unit():
    u = PanelUnit("a", (1.0,), z0=1.0, z1=3.5, y0=2.0, y1=1.0)
    assert derive_deltas(u) == (2.5, -1.0)
    assert (u.delta_z, u.delta_y) == (2.5, -1.0)


def test_deltas_reject_nan():
    u = PanelUnit("a", (), z0=float("nan"), z1=1.0, y0=0.0, y1=0.0)
    with pytest.raises(ValidationError):
        derive_deltas(u)


def test_stayer_has_zero_dose_change():
    assert PanelUnit("s", (), 2.0, 2.0, 0.0, 1.0).delta_z == 0.0


def test_duplicate_ids_rejected():
    u = PanelUnit("a", (), 0, 1, 0, 1)
    with pytest.raises(ValidationError):
        PanelDataset((u, u))


def test_covariate_count_mismatch():
    with pytest.raises(ValidationError):
        PanelDataset((PanelUnit("a", (1.0,), 0, 1, 0, 1),), ())


def test_load_panel_covariates_default_to_extra_columns(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("id,age,z0,z1,y0,y1,inc\nA,30,0,1,2,3,5.5\nB,40,1,1,2,2,6\n")
    ds = load_panel(p)
    assert ds.covariate_names == ("age", "inc")
    assert ds.units[0].x == (30.0, 5.5)
    assert list(ds.delta_z) == [1.0, 0.0]


def test_load_panel_covariate_subset_and_schema(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("unit,age,d0,d1,y0,y1,inc\nA,30,0,1,2,3,5.5\n")
    ds = load_panel(p, schema={"id": "unit", "z0": "d0", "z1": "d1"}, covariates=["inc"])
    assert ds.covariate_names == ("inc",)
    assert ds.ids == ["A"]


def test_missing_column_names_the_column(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("id,z0,z1,y0\nA,0,1,2\n")
    with pytest.raises(SchemaError) as err:
        load_panel(p)
    assert err.value.column == "y1"


def test_parse_error_reports_row_and_column(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("id,z0,z1,y0,y1\nA,0,1,2,3\nB,0,x,2,3\n")
    with pytest.raises(ParseError) as err:
        load_panel(p)
    assert (err.value.row, err.value.column) == (2, "z1")


def test_write_then_load_is_exact(tmp_path, rng):
    X = rng.normal(size=(7, 2)) * 1e3
    vals = rng.normal(size=(4, 7)) / 3
    ds = PanelDataset.from_arrays(X, *vals, ids=[f"id,{i}" for i in range(7)])
    path = tmp_path / "round.csv"
    write_panel(ds, path)
    back = load_panel(path)
    assert back == ds


def test_validate_panel_flags_nonfinite_and_counts_stayers():
    ds = PanelDataset((
        PanelUnit("a", (1.0,), 0, 0, 0, 1),
        PanelUnit("b", (math.inf,), 0, 2, 0, 1),
        PanelUnit("c", (0.0,), 1, 1, float("nan"), 1),
    ), ("x",))
    rep = validate_panel(ds)
    assert not rep.ok
    assert rep.stayer_count == 2
    assert ("b", "x") in rep.nonfinite and ("c", "y0") in rep.nonfinite
    assert rep.delta_z_min == 0 and rep.delta_z_max == 2


def test_from_arrays_pads_ids_for_sorting():
    ds = PanelDataset.from_arrays(np.zeros((11, 1)), *np.zeros((4, 11)))
    assert ds.ids == sorted(ds.ids)
