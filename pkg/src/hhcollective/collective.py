"""Distribution-factor diagnostics of the collective model.

* proportionality: the ratio of the two factors' effects is common to all
  unconditional share equations (four product-form cross-equation restrictions);
* exclusion: once one factor is replaced by a conditioning good's share, the
  other factor must drop out of the remaining four equations;
* monotonicity: cubic polynomials in the log factors, read at the median.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .demand import DemandData, FitBundle, prepare
from .estimation import (
    Restriction,
    SystemFit,
    WaldResult,
    linear_restriction,
    wald_bootstrap,
    wald_bootstrap_many,
    wald_nonlinear,
)
from .panel import GOODS
from .psychometrics import FactorSet

logger = logging.getLogger(__name__)

FACTORS = ("ln_z1", "ln_z2")
NEAR_ZERO_SE = 5.0
SIGNIFICANCE = 0.10


def product_restrictions(anchor: int, n_goods: int = len(GOODS)) -> list[Restriction]:
    """``b_a1 b_s2 - b_a2 b_s1 = 0`` for every good s other than the anchor.

    The parameter vector is good-major: ``theta[2 j + k]`` is the effect of
    factor k on good j.
    """
    size = 2 * n_goods
    out = []
    for s in range(n_goods):
        if s == anchor:
            continue

        def func(th, a=anchor, s=s):
            return th[2 * a] * th[2 * s + 1] - th[2 * a + 1] * th[2 * s]

        def grad(th, a=anchor, s=s):
            g = np.zeros(size)
            g[2 * a] = th[2 * s + 1]
            g[2 * s + 1] = th[2 * a]
            g[2 * a + 1] = -th[2 * s]
            g[2 * s] = -th[2 * a + 1]
            return g

        out.append(Restriction(f"{GOODS[anchor]}:{GOODS[s]}", func, grad))
    return out


def _factor_block(fit: SystemFit, columns: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    idx = [fit.index(eq, c) for eq in fit.equations for c in columns]
    return fit.theta[idx], fit.vcov_subset(idx)


def _coef_table(fit: SystemFit, columns: Sequence[str]) -> tuple[pd.DataFrame, pd.DataFrame]:
    coef = pd.DataFrame(
        {eq: [fit.coef(eq, c) for c in columns] for eq in fit.equations}, index=list(columns)
    )
    se = pd.DataFrame(
        {eq: [fit.se(eq, c) for c in columns] for eq in fit.equations}, index=list(columns)
    )
    return coef, se


def _fmt(x: float, digits: int = 3) -> str:
    s = f"{x:.{digits}f}"
    if s.startswith("0."):
        return s[1:]
    if s.startswith("-0."):
        return "-" + s[2:]
    return s


def _render(coef: pd.DataFrame, se: pd.DataFrame, footer: Sequence[str]) -> str:
    labels = [c.replace("share_", "w_") for c in coef.columns]
    width = max(10, *(len(s) for s in labels))
    rows = [" " * 12 + "".join(f"{s:>{width}}" for s in labels)]
    for name in coef.index:
        rows.append(f"{name:<12}" + "".join(f"{_fmt(v):>{width}}" for v in coef.loc[name]))
        rows.append(" " * 12 + "".join(f"{'(' + _fmt(v) + ')':>{width}}" for v in se.loc[name]))
    rule = "-" * len(rows[0])
    return "\n".join([rule, *rows, rule, *footer, ""])


def test_line(w: WaldResult) -> str:
    p = w.p_bootstrap if w.p_bootstrap is not None else w.p_asymptotic
    return f"chi2({w.df}) = {w.statistic:.3f} (p = {_fmt(p)})"


@dataclass
class ProportionalityTest:
    wald: WaldResult
    coefficients: pd.DataFrame  # factors x equations
    std_errors: pd.DataFrame
    ratios: pd.Series  # b_j1 / b_j2 per good
    near_zero: pd.Series  # |b_j2| < 5 SE
    anchor: str
    n_obs: int
    n_clusters: int
    warnings: list[str] = field(default_factory=list)

    @property
    def df(self) -> int:
        return self.wald.df

    @property
    def p_value(self) -> float:
        return self.wald.p_bootstrap if self.wald.p_bootstrap is not None else self.wald.p_asymptotic

    def rejects(self, level: float = 0.05) -> bool:
        return self.p_value < level

    def to_dict(self) -> dict:
        return {
            "test": "proportionality",
            "anchor": self.anchor,
            **self.wald.to_dict(),
            "coefficients": {c: self.coefficients[c].tolist() for c in self.coefficients},
            "std_errors": {c: self.std_errors[c].tolist() for c in self.std_errors},
            "factors": list(self.coefficients.index),
            "ratios": {k: float(v) for k, v in self.ratios.items()},
            "near_zero_denominator": {k: bool(v) for k, v in self.near_zero.items()},
            "reject_at_10pct": bool(self.p_value < SIGNIFICANCE),
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        ratio_line = "ratio z1/z2: " + "  ".join(
            f"{g.replace('share_', '')}={self.ratios[g]:.3f}{'*' if self.near_zero[g] else ''}"
            for g in self.ratios.index
        )
        footer = [f"N = {self.n_obs}", ratio_line, test_line(self.wald)]
        if self.near_zero.any():
            footer.insert(2, "* |b_j2| below 5 standard errors: ratio poorly determined")
        return _render(self.coefficients, self.std_errors, footer)


@dataclass
class ExclusionTest:
    wald: WaldResult
    coefficients: pd.DataFrame
    std_errors: pd.DataFrame
    t_stats: pd.Series
    first_stage_f: float
    factor: str
    conditioning_good: str
    n_obs: int
    n_clusters: int
    warnings: list[str] = field(default_factory=list)

    @property
    def df(self) -> int:
        return self.wald.df

    @property
    def p_value(self) -> float:
        return self.wald.p_bootstrap if self.wald.p_bootstrap is not None else self.wald.p_asymptotic

    def rejects(self, level: float = 0.05) -> bool:
        return self.p_value < level

    def to_dict(self) -> dict:
        return {
            "test": "exclusion",
            "factor": self.factor,
            "conditioning_good": self.conditioning_good,
            **self.wald.to_dict(),
            "coefficients": {c: self.coefficients[c].tolist() for c in self.coefficients},
            "std_errors": {c: self.std_errors[c].tolist() for c in self.std_errors},
            "regressors": list(self.coefficients.index),
            "t_stats": {k: float(v) for k, v in self.t_stats.items()},
            "first_stage_f": self.first_stage_f,
            "reject_at_10pct": bool(self.p_value < SIGNIFICANCE),
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        t_line = "t: " + "  ".join(
            f"{g.replace('share_', '')}={v:.3f}" for g, v in self.t_stats.items()
        )
        footer = [
            f"N = {self.n_obs}",
            f"first-stage F = {self.first_stage_f:.2f}",
            t_line,
            test_line(self.wald),
        ]
        return _render(self.coefficients, self.std_errors, footer + list(self.warnings))


def _anchor_index(anchor: str) -> int:
    if anchor not in GOODS:
        raise ValueError(f"anchor must be one of {GOODS}")
    return GOODS.index(anchor)


def _proportionality_setup(bundle: FitBundle, anchor: str):
    restrictions = product_restrictions(_anchor_index(anchor), len(bundle.fit.equations))
    return restrictions, lambda b: _factor_block(b.fit, FACTORS)


def _exclusion_setup(data: DemandData, bundle: FitBundle):
    factor = f"ln_z{data.config.retained_factor}"
    eqs = bundle.fit.equations
    restrictions = [linear_restriction(eq, j, len(eqs)) for j, eq in enumerate(eqs)]
    return restrictions, lambda b: _factor_block(b.fit, [factor])


def _proportionality_result(bundle: FitBundle, wald: WaldResult, anchor: str) -> ProportionalityTest:
    fit = bundle.fit
    coef, se = _coef_table(fit, FACTORS)
    ratios = coef.loc["ln_z1"] / coef.loc["ln_z2"]
    near_zero = coef.loc["ln_z2"].abs() < NEAR_ZERO_SE * se.loc["ln_z2"]
    warnings = list(bundle.warnings)
    if near_zero.any():
        goods = ", ".join(near_zero.index[near_zero])
        warnings.append(f"near-zero z2 effect in {goods}: ratio diagnostics unreliable")
    return ProportionalityTest(
        wald=wald,
        coefficients=coef,
        std_errors=se,
        ratios=ratios,
        near_zero=near_zero,
        anchor=anchor,
        n_obs=fit.n_obs,
        n_clusters=fit.n_clusters,
        warnings=warnings,
    )


def _exclusion_result(data: DemandData, bundle: FitBundle, wald: WaldResult) -> ExclusionTest:
    fit = bundle.fit
    factor = f"ln_z{data.config.retained_factor}"
    cond = f"share_{data.config.conditioning_good}"
    coef, se = _coef_table(fit, [factor, cond, f"cf_{cond}"])
    return ExclusionTest(
        wald=wald,
        coefficients=coef,
        std_errors=se,
        t_stats=coef.loc[factor] / se.loc[factor],
        first_stage_f=float(bundle.good_stage.f_stat[0]),
        factor=factor,
        conditioning_good=data.config.conditioning_good,
        n_obs=fit.n_obs,
        n_clusters=fit.n_clusters,
        warnings=list(bundle.warnings),
    )


def _need_seed(B, seed):
    if B is not None and seed is None:
        raise ValueError("a bootstrap needs a seed")


def test_proportionality(
    data: DemandData,
    B: int | None = None,
    seed: int | None = None,
    anchor: str = "cm",
    n_workers: int = 1,
    bundle: FitBundle | None = None,
) -> ProportionalityTest:
    """Wald test of common factor-effect ratios across the five share equations.

    With `B` given, the p-value also comes from a recentered pairs-cluster
    bootstrap that re-runs every estimation stage on each resample.
    """
    _need_seed(B, seed)
    bundle = bundle or data.unconditional()
    restrictions, block = _proportionality_setup(bundle, anchor)
    if B is None:
        wald = wald_nonlinear(*block(bundle), restrictions)
    else:
        wald = wald_bootstrap(
            lambda rows, labels: block(data.unconditional(rows, labels)),
            data.clusters, restrictions, B, seed, n_workers,
        )
    return _proportionality_result(bundle, wald, anchor)


def test_exclusion(
    data: DemandData,
    B: int | None = None,
    seed: int | None = None,
    n_workers: int = 1,
    bundle: FitBundle | None = None,
) -> ExclusionTest:
    """Joint Wald test that the retained factor is absent from the conditional system."""
    _need_seed(B, seed)
    bundle = bundle or data.conditional()
    restrictions, block = _exclusion_setup(data, bundle)
    if B is None:
        wald = wald_nonlinear(*block(bundle), restrictions)
    else:
        wald = wald_bootstrap(
            lambda rows, labels: block(data.conditional(rows, labels)),
            data.clusters, restrictions, B, seed, n_workers,
        )
    return _exclusion_result(data, bundle, wald)


def run_tests(
    data: DemandData,
    B: int | None = None,
    seed: int | None = None,
    anchor: str = "cm",
    n_workers: int = 1,
) -> tuple[ProportionalityTest, ExclusionTest]:
    """Both collective tests, bootstrapped on one shared set of resamples.

    Cheaper than two separate calls because the income first stage is
    estimated once per resample; p-values therefore differ slightly from
    separate runs with the same seed.
    """
    _need_seed(B, seed)
    unc, cond = data.both()
    r_prop, b_prop = _proportionality_setup(unc, anchor)
    r_excl, b_excl = _exclusion_setup(data, cond)
    if B is None:
        w_prop = wald_nonlinear(*b_prop(unc), r_prop)
        w_excl = wald_nonlinear(*b_excl(cond), r_excl)
    else:
        def estimate(rows, labels):
            u, c = data.both(rows, labels)
            return [b_prop(u), b_excl(c)]

        w_prop, w_excl = wald_bootstrap_many(
            estimate, data.clusters, [r_prop, r_excl], B, seed, n_workers
        )
    return _proportionality_result(unc, w_prop, anchor), _exclusion_result(data, cond, w_excl)


test_proportionality.__test__ = False
test_exclusion.__test__ = False
test_line.__test__ = False
run_tests.__test__ = False


# --- monotonicity ---------------------------------------------------------

POLY_TERMS = tuple(f"ln_z{k}{p}" for k in (1, 2) for p in ("", "_sq", "_cu"))


def polynomial_terms(factors: FactorSet) -> pd.DataFrame:
    """Squares and cubes of the log factors (levels are already in the design)."""
    ln_z = factors.ln_z
    return pd.DataFrame(
        {
            "ln_z1_sq": ln_z[:, 0] ** 2,
            "ln_z1_cu": ln_z[:, 0] ** 3,
            "ln_z2_sq": ln_z[:, 1] ** 2,
            "ln_z2_cu": ln_z[:, 1] ** 3,
        }
    )


@dataclass
class MonotonicityReport:
    coefficients: pd.DataFrame  # 6 polynomial terms x 5 shares
    std_errors: pd.DataFrame
    median_ln_z: tuple[float, float]
    slope_z2_at_median: pd.Series
    increasing_in_z2: pd.Series
    joint_tests: pd.DataFrame  # per share: W and p for the z1 and z2 polynomials
    n_obs: int

    def to_dict(self) -> dict:
        return {
            "terms": list(self.coefficients.index),
            "coefficients": {c: self.coefficients[c].tolist() for c in self.coefficients},
            "std_errors": {c: self.std_errors[c].tolist() for c in self.std_errors},
            "median_ln_z": list(self.median_ln_z),
            "slope_z2_at_median": {k: float(v) for k, v in self.slope_z2_at_median.items()},
            "increasing_in_z2": {k: bool(v) for k, v in self.increasing_in_z2.items()},
            "joint_tests": {
                c: {k: float(v) for k, v in self.joint_tests.loc[c].items()}
                for c in self.joint_tests.index
            },
            "n_obs": self.n_obs,
        }

    def table(self) -> str:
        footer = [f"N = {self.n_obs}"]
        footer.append(
            "increasing in z2 at median: "
            + "  ".join(f"{g.replace('share_', '')}={'yes' if v else 'no'}"
                        for g, v in self.increasing_in_z2.items())
        )
        return _render(self.coefficients, self.std_errors, footer)


def check_monotonicity(
    frame: pd.DataFrame, factors: FactorSet, config=None
) -> MonotonicityReport:
    """Unconditional shares on cubic polynomials of both log factors."""
    data = prepare(frame, factors, config, extra=polynomial_terms(factors))
    fit = data.unconditional().fit
    coef, se = _coef_table(fit, POLY_TERMS)
    m1, m2 = (float(v) for v in np.median(factors.ln_z, axis=0))
    b = coef.loc[["ln_z2", "ln_z2_sq", "ln_z2_cu"]].to_numpy()
    slope = pd.Series(b[0] + 2 * b[1] * m2 + 3 * b[2] * m2**2, index=coef.columns)

    rows = {}
    for eq in fit.equations:
        out = {}
        for k in (1, 2):
            idx = [fit.index(eq, f"ln_z{k}{p}") for p in ("", "_sq", "_cu")]
            th, V = fit.theta[idx], fit.vcov_subset(idx, leverage=True)
            w = float(th @ np.linalg.solve(V, th))
            out[f"W_z{k}"] = w
            out[f"p_z{k}"] = float(stats.chi2.sf(w, 3))
        rows[eq] = out
    return MonotonicityReport(
        coefficients=coef,
        std_errors=se,
        median_ln_z=(m1, m2),
        slope_z2_at_median=slope,
        increasing_in_z2=slope > 0,
        joint_tests=pd.DataFrame(rows).T,
        n_obs=fit.n_obs,
    )
