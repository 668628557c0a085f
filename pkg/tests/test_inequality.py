import numpy as np
import pandas as pd
import pytest
from scipy import stats

from oracles import riceb as riceb_oracle
from hhcollective.inequality import (
    FractionGroups,
    InequalityError,
    InequalityReport,
    MeanTest,
    RicebPair,
    analyze,
    bootstrap_mean_test,
    compute_riceb,
    group_by_fraction,
    kde,
    riceb,
    riceb_summary,
)


def test_riceb_whole_budget():
    assert riceb(100.0, 10.0, 50.0, 400.0, 1000.0) == 1.0


def test_riceb_against_oracle():
    rng = np.random.default_rng(0)
    c, w, l, C = rng.uniform(1, 100, (4, 20))
    y = rng.uniform(500, 900, 20)
    np.testing.assert_allclose(riceb(c, w, l, C, y), riceb_oracle(c, w, l, C, y), rtol=1e-15)


def test_riceb_needs_positive_income():
    with pytest.raises(InequalityError):
        riceb(1.0, 1.0, 1.0, 1.0, 0.0)


def _frame(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return pd.DataFrame({
        "cons_private_m": rng.uniform(50, 200, n), "cons_private_f": rng.uniform(50, 200, n),
        "wage_m": rng.uniform(8, 30, n), "wage_f": rng.uniform(8, 30, n),
        "leisure_m": rng.uniform(60, 100, n), "leisure_f": rng.uniform(60, 100, n),
        "cons_public": rng.uniform(300, 700, n), "y": rng.uniform(2000, 6000, n),
    })


def test_symmetric_couple_has_no_inequality():
    f = _frame()
    for a, b in (("cons_private_f", "cons_private_m"), ("wage_f", "wage_m"), ("leisure_f", "leisure_m")):
        f[a] = f[b]
    assert np.all(compute_riceb(f).inequality == 0.0)


def test_spouse_swap_flips_sign():
    f = _frame()
    g = f.rename(columns={c: c[:-1] + ("m" if c.endswith("f") else "f") for c in f.columns if c[-2:] in ("_m", "_f")})
    np.testing.assert_array_equal(compute_riceb(g).inequality, -compute_riceb(f).inequality)


def test_uniform_groups():
    g = group_by_fraction(np.linspace(0.01, 1.0, 100))
    assert g.sizes() == {"high": 20, "mid": 10, "low": 20}


def test_degenerate_fractions():
    with pytest.raises(InequalityError, match="degenerate fraction distribution"):
        group_by_fraction(np.full(50, 0.5))


def test_too_few_couples():
    with pytest.raises(InequalityError):
        group_by_fraction(np.linspace(0, 1, 10))


def test_kde_integrates_to_one():
    x = np.random.default_rng(1).gamma(2.0, size=700)
    grid, dens = kde(x)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


def test_kde_symmetry():
    half = np.random.default_rng(2).standard_normal(300)
    x = np.r_[half, -half] + 4.0
    grid, dens = kde(x)
    np.testing.assert_allclose(dens, dens[::-1], atol=1e-6)
    assert grid[0] + grid[-1] == pytest.approx(8.0)


def test_kde_recovers_normal_density():
    x = np.random.default_rng(3).standard_normal(10_000)
    grid, dens = kde(x)
    assert np.max(np.abs(dens - stats.norm.pdf(grid))) < 0.02


def test_kde_degenerate():
    with pytest.raises(InequalityError):
        kde(np.ones(20))


def test_identical_groups():
    a = np.random.default_rng(4).standard_normal(40)
    res = bootstrap_mean_test(a, a.copy(), 199, 1)
    assert res.t == 0.0 and res.p_value == 1.0


def test_mean_test_sign_and_difference():
    res = bootstrap_mean_test(np.array([1.0, 1.2, 0.9, 1.1]), np.array([0.1, 0.2, 0.0, 0.3]), 199, 1)
    assert res.t > 0
    assert res.difference_pct == pytest.approx(90.0)


def test_mean_test_reproducible():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((2, 30))
    assert bootstrap_mean_test(a, b, 199, 3) == bootstrap_mean_test(a, b, 199, 3)


def test_mean_test_size():
    rejections = 0
    for r in range(300):
        rng = np.random.default_rng([77, r])
        a, b = rng.standard_normal(60), rng.standard_normal(60)
        rejections += bootstrap_mean_test(a, b, 199, r).p_value < 0.05
    assert 0.02 <= rejections / 300 <= 0.09


def test_table_row_format():
    groups = {"conscientiousness": FractionGroups("conscientiousness", np.arange(226), np.arange(113), np.arange(226), (0, 0, 0, 0))}
    tests = {"conscientiousness": MeanTest(-3.506, 0.014, 3.949, 226, 226, 499)}
    pair = RicebPair(np.array([0.6, 0.7]), np.array([0.5, 0.4]))
    rep = InequalityReport(pair, groups, tests, {}, riceb_summary(pair))
    row = next(line for line in rep.table().splitlines() if line.startswith("conscientiousness"))
    assert row.split()[1:4] == ["-3.506", ".014", "3.949"]


def test_analyze_outputs(tmp_path, null_sim):
    rep = analyze(null_sim.frame, 99, 5)
    assert set(rep.tests) == set(rep.groups)
    for g in rep.groups.values():
        assert g.sizes()["high"] == g.sizes()["low"] == 80
    paths = rep.write_densities(tmp_path)
    assert len(paths) == 21
    d = pd.read_csv(paths[0])
    assert list(d.columns) == ["grid", "density"] and len(d) == 512
    assert rep.summary.loc["mean", "inequality"] == pytest.approx(
        rep.summary.loc["mean", "riceb_f"] - rep.summary.loc["mean", "riceb_m"]
    )
