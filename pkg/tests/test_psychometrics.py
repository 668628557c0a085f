import numpy as np
import pandas as pd
import pytest

from oracles import two_factor_correlation
from hhcollective.panel import TRAITS
from hhcollective.psychometrics import (
    PcaModel,
    PsychometricsError,
    build_factors,
    cronbach_alpha,
    female_fractions,
    fit_pca,
    impute_frame,
    impute_missing,
    personality_ratios,
    rescale,
    score_scale,
)


def test_score_constant_items():
    assert score_scale([3, 3, 3]).value == 3.0


def test_score_reverse_coding():
    assert score_scale([1, 5], reverse_coded=[1], bounds=(1, 5)).value == 1.0


def test_score_self_esteem_ceiling():
    assert score_scale([7] * 10, bounds=(1, 7)).value == 7.0


def test_score_out_of_range():
    with pytest.raises(PsychometricsError):
        score_scale([0, 3])


def test_alpha_perfectly_correlated():
    x = np.arange(10.0)
    assert cronbach_alpha(np.column_stack([x, x])) == pytest.approx(1.0)


def test_alpha_independent_items():
    rng = np.random.default_rng(0)
    assert abs(cronbach_alpha(rng.standard_normal((100_000, 2)))) < 0.02


def test_alpha_matches_spearman_brown():
    rho, k = 0.45, 8
    expected = k * rho / (1 + (k - 1) * rho)
    assert expected == pytest.approx(0.867, abs=5e-4)
    cov = np.full((k, k), rho) + (1 - rho) * np.eye(k)
    x = np.random.default_rng(1).multivariate_normal(np.zeros(k), cov, size=50_000)
    a = cronbach_alpha(x)
    assert a > 0.7
    assert a == pytest.approx(expected, abs=0.01)


def test_impute_mean():
    out = impute_missing({2009: 3.0, 2010: None, 2012: 4.0})
    assert out[2010].value == 3.5 and out[2010].imputed
    assert not out[2009].imputed


def test_impute_single_observation():
    out = impute_missing({2009: None, 2010: 2.8, 2012: None})
    assert all(v.value == 2.8 for v in out.values())


def test_impute_median():
    out = impute_missing({1: 2.0, 2: 2.0, 3: 5.0, 4: None}, method="median")
    assert out[4].value == 2.0


def test_impute_nothing_observed():
    with pytest.raises(PsychometricsError):
        impute_missing({1: None})


def test_impute_frame_drops_never_observed(null_sim):
    frame = null_sim.frame.head(6).copy()
    frame.loc[0, "openness_m"] = np.nan
    frame.loc[1, "household_id"] = frame.loc[2, "household_id"]
    frame.loc[1, "neuroticism_f"] = np.nan
    out, dropped = impute_frame(frame)
    assert dropped == [frame.loc[0, "household_id"]]
    assert len(out) == 5
    assert out.loc[0, "neuroticism_f"] == frame.loc[2, "neuroticism_f"]
    assert out["imputed_f"].sum() == 1


def _orthogonal_data(n=200, p=7, seed=0):
    x = np.random.default_rng(seed).standard_normal((n, p))
    x -= x.mean(axis=0)
    q, _ = np.linalg.qr(x)
    return q


def test_identity_correlation_spectrum():
    model = fit_pca(_orthogonal_data(), n_components=2)
    np.testing.assert_allclose(model.all_eigenvalues, 1.0, atol=1e-10)
    np.testing.assert_allclose(model.variance_shares, 1 / 7, atol=1e-10)


@pytest.fixture(scope="module")
def two_factor_model():
    R = two_factor_correlation()
    x = np.random.default_rng(5).multivariate_normal(np.zeros(7), R, size=20_000)
    return fit_pca(x, n_components=2), R


def test_eigenvalues_nonincreasing_and_sum(two_factor_model):
    model, _ = two_factor_model
    assert np.all(np.diff(model.all_eigenvalues) <= 0)
    assert model.all_eigenvalues.sum() == pytest.approx(7.0, abs=1e-10)


def test_eigenvectors_orthonormal(two_factor_model):
    model, _ = two_factor_model
    np.testing.assert_allclose(model.eigenvectors.T @ model.eigenvectors, np.eye(2), atol=1e-12)


def test_largest_loading_positive(two_factor_model):
    model, _ = two_factor_model
    for k in range(2):
        col = model.eigenvectors[:, k]
        assert col[np.argmax(np.abs(col))] > 0


def test_cutoff_pattern(two_factor_model):
    model, _ = two_factor_model
    tab = model.cutoff_table()
    pc1 = {t for t in TRAITS if tab.loc[t, "PC1"]}
    pc2 = {t for t in TRAITS if tab.loc[t, "PC2"]}
    assert pc1 == {"extraversion", "self_esteem", "cognitive_engagement"}
    assert pc2 == {"neuroticism", "conscientiousness"}


def test_report_layout(two_factor_model):
    model, _ = two_factor_model
    text = model.report()
    assert "Eigenvalue" in text and "Variance share" in text
    assert "1. openness" in text and "7. cognitive_engagement" in text


def test_eigenvalue_format():
    # the report prints two decimals, e.g. a top pair of 1.41 and 1.23
    w = np.array([1.41, 1.23, 1.1, 1.0, 0.9, 0.7, 0.66])
    model = PcaModel(TRAITS, np.eye(7)[:, :2], w[:2], w, np.zeros(7), np.ones(7), np.array([[0, 1], [0, 1.0]]))
    assert "1.41" in model.report() and "1.23" in model.report()


def test_model_json_roundtrip(tmp_path, two_factor_model):
    model, _ = two_factor_model
    model.save(tmp_path / "pca.json")
    back = PcaModel.load(tmp_path / "pca.json")
    np.testing.assert_array_equal(back.eigenvectors, model.eigenvectors)
    np.testing.assert_array_equal(back.scale_bounds, model.scale_bounds)


def test_rescale_endpoints():
    b = np.array([[-2.0, 4.0]])
    assert rescale([[-2.0]], b)[0, 0] == 1.0
    assert rescale([[4.0]], b)[0, 0] == 100.0
    assert rescale([[1.0]], b)[0, 0] == 50.5
    assert rescale([[4.0 + 1e-9]], b)[0, 0] == 100.0


def test_rescale_degenerate_bounds():
    with pytest.raises(PsychometricsError):
        rescale([[0.0]], np.array([[1.0, 1.0]]))


def test_identical_spouses(null_sim):
    frame = null_sim.frame.copy()
    for t in TRAITS:
        frame[f"{t}_f"] = frame[f"{t}_m"]
    fs = build_factors(frame)
    np.testing.assert_allclose(fs.ln_z, 0.0, atol=1e-15)
    np.testing.assert_allclose(fs.fractions.to_numpy(), 0.5)


def test_log_ratio_arithmetic():
    assert np.log(60 / 30) == pytest.approx(0.6931, abs=1e-4)


def test_female_fraction_at_sample_means():
    frame = pd.DataFrame({**{f"{t}_m": [3.0] for t in TRAITS}, **{f"{t}_f": [3.0] for t in TRAITS}})
    frame["conscientiousness_f"], frame["conscientiousness_m"] = 2.85, 2.78
    r = female_fractions(frame)["r_conscientiousness"].iloc[0]
    assert r == pytest.approx(0.5062, abs=5e-5)
    assert abs(r - 0.507) < 0.001


def _ratio_frame(rows):
    base = {**{f"{t}_m": 3.0 for t in TRAITS}, **{f"{t}_f": 3.0 for t in TRAITS}}
    return pd.DataFrame([{**base, **r} for r in rows])


def test_ratio_all_match():
    frame = _ratio_frame([{"age_m": 40, "age_f": 40, "educ_m": "low", "educ_f": "low"}] * 4)
    np.testing.assert_allclose(personality_ratios(frame).to_numpy(), 1.0)


def test_ratio_smoothing_arithmetic():
    # three husbands share a cell, no wife does: (1 + 3) / (1 + 0)
    frame = _ratio_frame([{"age_m": 40, "age_f": 60, "educ_m": "low", "educ_f": "high"}] * 3)
    assert personality_ratios(frame)["pratio_openness_m"].tolist() == [4.0] * 3


def test_ratio_balanced_mean():
    rng = np.random.default_rng(3)
    n = 5000
    rows = {
        "age_m": rng.integers(25, 66, n), "age_f": rng.integers(25, 66, n),
        "educ_m": rng.choice(["low", "middle", "high"], n), "educ_f": rng.choice(["low", "middle", "high"], n),
    }
    for t in TRAITS:
        rows[f"{t}_m"] = rng.uniform(1, 5, n)
        rows[f"{t}_f"] = rng.uniform(1, 5, n)
    ratios = personality_ratios(pd.DataFrame(rows))
    assert 0.9 < ratios.to_numpy().mean() < 1.1


def test_factors_need_imputed_traits(null_sim):
    frame = null_sim.frame.copy()
    frame.loc[0, "openness_f"] = np.nan
    with pytest.raises(PsychometricsError, match="impute"):
        build_factors(frame)


def test_frozen_model_reproduces_factors(null_sim):
    fs = build_factors(null_sim.frame, null_sim.factors.pca)
    np.testing.assert_array_equal(fs.z, null_sim.factors.z)
    assert np.all((fs.pc_m >= 1) & (fs.pc_m <= 100))
