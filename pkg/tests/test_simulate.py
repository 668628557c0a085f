import numpy as np
import pandas as pd
import pytest

import oracles
from hhcollective.panel import load_panel, write_panel_csv
from hhcollective.simulate import (
    SimScenario,
    SimulationError,
    closed_form_shares,
    generate,
    pareto_weight,
    preferences,
    share_derivatives,
    solve_p1,
    verify_proportionality_numeric,
)

ONES = {k: 1.0 for k in ("alpha_m", "beta_m", "gamma_m", "alpha_f", "beta_f", "gamma_f")}


def test_unit_parameters():
    a = solve_p1(ONES, 1.0, 1.0, 600.0, 1.0)
    for k in ("c_m", "c_f", "l_m", "l_f"):
        assert a[k] == pytest.approx(100.0)
    assert a["C"] == pytest.approx(200.0)


def test_small_weight_starves_wife():
    a = solve_p1(ONES, 1.0, 1.0, 600.0, 1e-9)
    assert a["c_f"] < 1e-6 and a["l_f"] < 1e-6


def test_budget_identity():
    rng = np.random.default_rng(0)
    n = 100_000
    prefs = {k: rng.uniform(0.05, 1, n) for k in ONES}
    wm, wf = rng.uniform(5, 40, n), rng.uniform(5, 40, n)
    y = rng.uniform(500, 9000, n)
    mu = rng.uniform(0.01, 0.99, n)
    a = solve_p1(prefs, wm, wf, y, mu)
    total = a["c_m"] + a["c_f"] + wm * a["l_m"] + wf * a["l_f"] + a["C"]
    np.testing.assert_allclose(total, y, rtol=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_matches_numerical_optimum(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.1, 1, 6)
    mu, wm, wf, y = rng.uniform(0.1, 0.9), rng.uniform(8, 30), rng.uniform(8, 30), rng.uniform(2000, 5000)
    prefs = dict(zip(ONES, p))
    ours = solve_p1(prefs, wm, wf, y, mu)
    num = oracles.allocation_numeric(p, mu, wm, wf, y)
    for k in ours:
        assert float(ours[k]) == pytest.approx(num[k], rel=1e-4)


def test_closed_form_against_oracle():
    sc = SimScenario()
    rng = np.random.default_rng(1)
    n = 50
    lz1, lz2 = rng.normal(0, 0.3, (2, n))
    wm, wf = rng.uniform(8, 30, (2, n))
    y = (wm + wf) * 112
    prefs = (sc.alpha_m, sc.beta_m, sc.gamma_m, sc.alpha_f, sc.beta_f, sc.gamma_f)
    np.testing.assert_allclose(
        closed_form_shares(sc, lz1, lz2, wm, wf, y), oracles.shares(prefs, sc.eta, lz1, lz2, wm, wf, y), rtol=1e-13
    )


def test_share_derivatives_against_oracle():
    sc = SimScenario()
    lz1, lz2 = np.array([0.1, -0.2]), np.array([0.05, 0.3])
    wm, wf = np.array([12.0, 20.0]), np.array([10.0, 15.0])
    y = (wm + wf) * 112
    prefs = (sc.alpha_m, sc.beta_m, sc.gamma_m, sc.alpha_f, sc.beta_f, sc.gamma_f)
    np.testing.assert_allclose(
        share_derivatives(sc, lz1, lz2, wm, wf, y),
        oracles.share_gradient(prefs, sc.eta, lz1, lz2, wm, wf, y),
        rtol=1e-6,
    )


def test_pareto_weight_clipped():
    sc = SimScenario(eta=(50.0, 0, 0, 0, 0, 0))
    assert pareto_weight(sc, 0, 0, 0, 0, 0) == 0.99


def test_unitary_weight_ignores_factors():
    sc = SimScenario(violation="unitary", eta=(0.3, 2.0, 2.0, 1.0, 1.0, 1.0))
    mu = pareto_weight(sc, np.array([-1.0, 1.0]), np.array([0.5, -0.5]), 1.0, 2.0, 3.0)
    assert mu[0] == mu[1]


def test_preference_shift_scales_wife_leisure_weight():
    sc = SimScenario(violation="preference_shift", violation_magnitude=0.5)
    p = preferences(sc, np.array([np.log(2.0)]), np.array([0.0]))
    assert p["beta_f"][0] == pytest.approx(sc.beta_f * 2**0.5)
    assert p["alpha_m"][0] == sc.alpha_m


POINT = {"z1": 1.1, "z2": 0.9, "wage_m": 14.0, "wage_f": 11.0, "nonlabor_income": 120.0}


def test_null_ratios_equal_weight_ratio():
    out = verify_proportionality_numeric(SimScenario(), POINT)
    np.testing.assert_allclose(out["ratio"], out["mu_ratio"], rtol=1e-6)


def test_shift_breaks_ratio():
    out = verify_proportionality_numeric(
        SimScenario(violation="preference_shift", violation_magnitude=0.5), POINT
    )
    spread = np.ptp(out["ratio"]) / np.abs(out["ratio"]).mean()
    assert spread > 1e-5


def test_irrelevant_first_factor():
    eta = list(SimScenario().eta)
    eta[1] = 0.0
    out = verify_proportionality_numeric(SimScenario(eta=tuple(eta)), POINT)
    np.testing.assert_allclose(out["ratio"], 0.0, atol=1e-8)


def test_uninformative_point():
    with pytest.raises(SimulationError, match="uninformative"):
        verify_proportionality_numeric(SimScenario(eta=(0, 1, 0, 0, 0, 0)), POINT)


def test_generate_is_deterministic():
    a = generate(SimScenario(noise_sd=0.02), 60, 5)
    b = generate(SimScenario(noise_sd=0.02), 60, 5)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    pd.testing.assert_frame_equal(a.truth, b.truth)
    c = generate(SimScenario(noise_sd=0.02), 60, 6)
    assert not np.allclose(a.frame["share_cm"], c.frame["share_cm"])


def test_noise_free_shares_match_truth():
    sim = generate(SimScenario(), 80, 2)
    for g in ("cm", "cf", "lm", "lf", "C"):
        np.testing.assert_allclose(sim.frame[f"share_{g}"], sim.truth[f"true_share_{g}"], rtol=1e-12)
    total = sim.frame[[f"share_{g}" for g in ("cm", "cf", "lm", "lf", "C")]].sum(axis=1)
    np.testing.assert_allclose(total, 1.0, rtol=1e-12)


def test_generated_sample_passes_validation(tmp_path, null_sim):
    path = tmp_path / "sim.csv"
    write_panel_csv(null_sim.frame, path)
    ok, rejects = load_panel(path)
    assert rejects == [] and len(ok) == len(null_sim.frame)
    assert (null_sim.frame[["hours_m", "hours_f"]] >= 10).all().all()


def test_truth_factors_drive_the_frame(null_sim):
    np.testing.assert_allclose(null_sim.truth["z1"], null_sim.factors.z[:, 0], rtol=1e-12)


def test_corner_scenario_rejected():
    with pytest.raises(SimulationError, match="corners"):
        generate(SimScenario(beta_m=5.0, beta_f=5.0), 100, 1)


def test_scenario_roundtrip():
    sc = SimScenario(violation="unitary", violation_magnitude=0.3, eta=(0, 1, 2, 3, 4, 5))
    assert SimScenario.from_dict(sc.to_dict()) == sc


def test_bad_scenarios():
    with pytest.raises(SimulationError):
        SimScenario(alpha_m=0)
    with pytest.raises(SimulationError):
        SimScenario(violation="chaos")
