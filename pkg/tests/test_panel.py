import io
import math

import numpy as np
import pandas as pd
import pytest

from hhcollective.panel import (
    CANONICAL_COLUMNS,
    TRAITS,
    HouseholdObservation,
    PanelError,
    derive_vars,
    frame_to_observations,
    full_income,
    load_panel,
    pool_waves,
    to_frame,
    validate,
    wave_dummies,
    write_panel_csv,
    write_rejects,
)

ROW = {
    "household_id": "a1", "wave": 2009, "wage_m": 13.63, "wage_f": 12.05,
    "hours_m": 37.43, "hours_f": 25.99, "nonlabor_income": 100.0,
    "cons_private_m": 120.0, "cons_private_f": 95.25, "cons_public": 579.10,
    "age_m": 48, "age_f": 46, "educ_m": "high", "educ_f": "middle",
    "n_children": 1, "married": 1,
    **{f"{t}_{s}": 3.0 for s in "mf" for t in TRAITS},
}


def csv_text(rows):
    return pd.DataFrame(rows).to_csv(index=False)


def obs(**kw):
    base = dict(
        household_id="x", wave=2010, wage_m=10.0, wage_f=10.0, hours_m=40.0, hours_f=30.0,
        nonlabor_income=0.0, cons_private_m=100.0, cons_private_f=100.0, cons_public=300.0,
        age_m=40, age_f=38, educ_m="low", educ_f="high", n_children=0, married=True,
    )
    base.update(kw)
    return HouseholdObservation(**base)


def test_clean_three_rows():
    rows = [dict(ROW, household_id=f"h{i}") for i in range(3)]
    ok, bad = load_panel(csv_text(rows).encode())
    assert len(ok) == 3 and bad == []


def test_low_hours_rejected_with_reason():
    ok, bad = load_panel(csv_text([dict(ROW, hours_m=8)]).encode())
    assert ok == []
    assert bad[0].reasons == ("hours below 10",)
    assert bad[0].line == 2


def test_minimum_female_wage_accepted():
    ok, bad = load_panel(csv_text([dict(ROW, wage_f=4.03)]).encode())
    assert len(ok) == 1 and not bad


@pytest.mark.parametrize(
    "change, reason",
    [
        ({"wage_m": 0}, "wage_m not positive"),
        ({"hours_f": 120}, "hours_f above 112"),
        ({"age_f": 70}, "age_f outside 25-65"),
        ({"cons_public": -1}, "cons_public negative"),
        ({"trait_scores_m": {"self_esteem": 7.5}}, "self_esteem_m outside [1, 7]"),
        ({"educ_m": "phd"}, "educ_m not in ('low', 'middle', 'high')"),
    ],
)
def test_invariant_violations(change, reason):
    assert reason in validate(obs(**change))


def test_multiple_reasons_collected():
    reasons = validate(obs(hours_m=5, age_m=20))
    assert "hours below 10" in reasons and "age_m outside 25-65" in reasons


def test_schema_map_renames_columns():
    renamed = {k: k.upper() for k in ROW}
    text = csv_text([{renamed[k]: v for k, v in ROW.items()}])
    ok, _ = load_panel(text.encode(), schema=renamed)
    assert ok[0].wage_f == 12.05


def test_missing_column_is_fatal():
    row = {k: v for k, v in ROW.items() if k != "wage_m"}
    with pytest.raises(PanelError, match="wage_m"):
        load_panel(csv_text([row]).encode())


def test_unparsable_number_is_fatal():
    with pytest.raises(PanelError, match="line 2"):
        load_panel(csv_text([dict(ROW, wage_m="abc")]).encode())


def test_unknown_schema_field():
    with pytest.raises(PanelError, match="unknown"):
        load_panel(csv_text([ROW]).encode(), schema={"salary": "x"})


def test_missing_trait_scores_stay_missing():
    ok, _ = load_panel(csv_text([dict(ROW, openness_f="")]).encode())
    assert ok[0].trait_scores_f["openness"] is None


def test_reject_log(tmp_path):
    _, bad = load_panel(csv_text([ROW, dict(ROW, hours_m=8, age_m=70)]).encode())
    write_rejects(bad, tmp_path / "r.csv")
    log = pd.read_csv(tmp_path / "r.csv")
    assert list(log.columns) == ["line", "household_id", "wave", "reason"]
    assert log.loc[0, "line"] == 3
    assert "hours below 10" in log.loc[0, "reason"]


def test_full_income():
    assert full_income(10, 10, 0) == 2240


def test_leisure():
    assert derive_vars(obs(hours_m=40)).leisure_m == 72


def test_leisure_at_sample_means():
    d = derive_vars(obs(wage_m=13.63, hours_m=37.43))
    assert d.leisure_m == pytest.approx(74.57)
    assert round(d.leisure_m, 1) == round(74.56, 1)


def test_shares_on_full_income():
    o = obs()
    d = derive_vars(o)
    y = 20 * 112
    assert d.shares["cm"] == pytest.approx(100 / y)
    assert d.shares["lm"] == pytest.approx(10 * 72 / y)
    assert d.shares["C"] == pytest.approx(300 / y)


def test_expenditure_denominator_sums_to_one():
    d = derive_vars(obs(), denominator="expenditure")
    assert sum(d.shares.values()) == pytest.approx(1.0)


def test_pool_waves_concatenates():
    a, b = obs(household_id="a", wave=2009), obs(household_id="b", wave=2010)
    pooled = pool_waves({2009: [a], 2010: [b]})
    assert [(o.household_id, o.wave) for o in pooled] == [("a", 2009), ("b", 2010)]


def test_wave_dummies():
    d = wave_dummies([2009, 2010, 2012, 2015, 2017, 2009])
    assert d.shape[1] == 4
    assert (d.sum(axis=1).iloc[[0, 5]] == 0).all()
    assert wave_dummies([2012, 2012]).shape[1] == 0


def test_frame_roundtrip(tmp_path, null_sim):
    path = tmp_path / "p.csv"
    write_panel_csv(null_sim.frame, path)
    ok, bad = load_panel(path)
    assert bad == []
    frame = to_frame(ok)
    for c in ("wage_m", "hours_f", "share_lf", "y"):
        np.testing.assert_allclose(frame[c], null_sim.frame[c], rtol=1e-12)
    back = to_frame(frame_to_observations(frame))
    pd.testing.assert_frame_equal(back, frame)


def test_written_panel_has_canonical_header(tmp_path, null_sim):
    buf = io.StringIO()
    write_panel_csv(null_sim.frame.head(2), buf)
    assert buf.getvalue().splitlines()[0].split(",") == list(CANONICAL_COLUMNS)


def test_missing_household_private_consumption_is_nan():
    frame = to_frame([obs()])
    assert math.isnan(frame.loc[0, "cons_private_household"])
