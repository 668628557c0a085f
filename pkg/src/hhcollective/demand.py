"""Budget-share demand systems: unconditional and z-conditional.

:class:`DemandData` freezes every row-level input of the two systems so the
whole estimation chain (wage regression, income control function, conditioning
good first stage, system fit) can be re-run on any resample of rows.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .estimation import (
    DesignMatrix,
    FirstStage,
    SystemFit,
    _qr_solve,
    collinear_columns,
    control_function_stage,
    fit_system,
)
from .panel import GOODS, T, TRAITS, wave_dummies
from .psychometrics import FactorSet

logger = logging.getLogger(__name__)

INCOME_SCALE = (1e3, 1e6)
WEAK_F = 4.0
MIN_WAGE_OBS = 50


class DemandError(ValueError):
    pass


@dataclass(frozen=True)
class DemandConfig:
    spouse_controls: str = "husband"  # or "wife"
    conditioning_good: str = "cm"
    inverted_factor: int = 2
    small_sample: bool = False

    def __post_init__(self):
        if self.spouse_controls not in ("husband", "wife"):
            raise DemandError("spouse_controls must be 'husband' or 'wife'")
        if self.conditioning_good not in GOODS:
            raise DemandError(f"conditioning_good must be one of {GOODS}")
        if self.inverted_factor not in (1, 2):
            raise DemandError("inverted_factor must be 1 or 2")

    @property
    def retained_factor(self) -> int:
        return 3 - self.inverted_factor


def _wage_design(age: np.ndarray, educ: np.ndarray, female: np.ndarray):
    cols = {
        "const": np.ones_like(age),
        "age": age,
        "age_sq": age**2 / 100.0,
        "educ_middle": (educ == "middle").astype(float),
        "educ_high": (educ == "high").astype(float),
        "female": female.astype(float),
    }
    return cols


def potential_income(
    wage_m, wage_f, age_m, age_f, educ_m, educ_f, nonlabor_income
) -> np.ndarray:
    """Household income at predicted (not realized) wages and full time endowment.

    Log wages of both spouses are pooled and regressed on age, age squared,
    education dummies and a female dummy; predicted wages are exponentiated
    log predictions. Dummy columns without variation are dropped.
    """
    wage_m, wage_f = np.asarray(wage_m, float), np.asarray(wage_f, float)
    n = wage_m.shape[0]
    if 2 * n < MIN_WAGE_OBS:
        raise DemandError(f"wage regression needs at least {MIN_WAGE_OBS} individuals")
    age = np.concatenate([np.asarray(age_m, float), np.asarray(age_f, float)])
    educ = np.concatenate([np.asarray(educ_m), np.asarray(educ_f)])
    female = np.r_[np.zeros(n), np.ones(n)]
    cols = _wage_design(age, educ, female)
    names = [c for c, v in cols.items() if c == "const" or np.ptp(v) > 0]
    X = np.column_stack([cols[c] for c in names])
    bad = collinear_columns(X, names)
    if bad:
        keep = [i for i, c in enumerate(names) if c not in bad]
        X, names = X[:, keep], [names[i] for i in keep]
    ln_w = np.log(np.concatenate([wage_m, wage_f]))
    coef, _ = _qr_solve(X, ln_w[:, None], names)
    w_hat = np.exp(X @ coef[:, 0])
    return (w_hat[:n] + w_hat[n:]) * T + np.asarray(nonlabor_income, float)


@dataclass
class FitBundle:
    """A fitted system together with the first stages that produced its design."""

    fit: SystemFit
    design: DesignMatrix
    outcomes: pd.DataFrame
    income_stage: FirstStage
    good_stage: FirstStage | None = None
    warnings: list[str] = field(default_factory=list)


@dataclass
class DemandData:
    """Row-aligned inputs of the demand systems."""

    shares: np.ndarray  # (n, 5) in GOODS order
    exog: DesignMatrix  # intercept, ln z, wages, e, m, tau
    income: np.ndarray  # (n, 2) scaled y, y^2
    wage_inputs: dict  # raw columns for the potential-income regression
    config: DemandConfig = DemandConfig()

    @property
    def n_obs(self) -> int:
        return self.shares.shape[0]

    @property
    def clusters(self) -> np.ndarray:
        return self.exog.clusters

    def _rows(self, rows, labels):
        if rows is None:
            return np.arange(self.n_obs), self.clusters
        return np.asarray(rows), (self.clusters[rows] if labels is None else np.asarray(labels))

    def instruments(self, rows: np.ndarray) -> np.ndarray:
        w = self.wage_inputs
        pi = potential_income(*(np.asarray(w[k])[rows] for k in (
            "wage_m", "wage_f", "age_m", "age_f", "educ_m", "educ_f", "nonlabor_income")))
        return np.column_stack([pi / INCOME_SCALE[0], pi**2 / INCOME_SCALE[1]])

    def income_block(self, rows=None, labels=None) -> tuple[DesignMatrix, FirstStage]:
        """Exogenous block plus y, y^2 and their control-function residuals."""
        rows, labels = self._rows(rows, labels)
        exog = self.exog.take(rows, labels)
        inst = self.instruments(rows)
        stage_design = exog.append(["pi", "pi_sq"], inst)
        income = self.income[rows]
        stage = control_function_stage(income, stage_design, ["pi", "pi_sq"], names=("y", "y_sq"))
        block = exog.append(["y", "y_sq"], income).append(["cf_y", "cf_y_sq"], stage.residuals)
        return block, stage

    def unconditional(self, rows=None, labels=None) -> FitBundle:
        rows, labels = self._rows(rows, labels)
        return self._unconditional(rows, *self.income_block(rows, labels))

    def conditional(self, rows=None, labels=None) -> FitBundle:
        """z-conditional system: the inverted factor is replaced by the conditioning good's share."""
        rows, labels = self._rows(rows, labels)
        return self._conditional(rows, *self.income_block(rows, labels))

    def both(self, rows=None, labels=None) -> tuple[FitBundle, FitBundle]:
        """Unconditional and conditional systems sharing one income first stage."""
        rows, labels = self._rows(rows, labels)
        block, stage = self.income_block(rows, labels)
        return self._unconditional(rows, block, stage), self._conditional(rows, block, stage)

    def _unconditional(self, rows, X: DesignMatrix, stage: FirstStage) -> FitBundle:
        Y = self.shares[rows]
        fit = fit_system(Y, X, [f"share_{g}" for g in GOODS], small_sample=self.config.small_sample)
        return FitBundle(fit, X, pd.DataFrame(Y, columns=fit.equations), stage)

    def _conditional(self, rows, block: DesignMatrix, income_stage: FirstStage) -> FitBundle:
        cfg = self.config
        inverted = f"ln_z{cfg.inverted_factor}"
        g = GOODS.index(cfg.conditioning_good)
        w_cond = self.shares[rows, g]
        good_stage = control_function_stage(
            w_cond, block, [inverted], names=(f"share_{cfg.conditioning_good}",)
        )
        X = block.drop([inverted]).append(
            [f"share_{cfg.conditioning_good}", f"cf_share_{cfg.conditioning_good}"],
            np.column_stack([w_cond, good_stage.residuals[:, 0]]),
        )
        others = [j for j in range(len(GOODS)) if j != g]
        Y = self.shares[rows][:, others]
        fit = fit_system(Y, X, [f"share_{GOODS[j]}" for j in others], small_sample=cfg.small_sample)
        warnings = []
        if good_stage.f_stat[0] < WEAK_F:
            warnings.append(
                f"weak instrument: first-stage F = {good_stage.f_stat[0]:.2f} < {WEAK_F:g}"
            )
        return FitBundle(fit, X, pd.DataFrame(Y, columns=fit.equations), income_stage, good_stage, warnings)


def covariate_frame(
    frame: pd.DataFrame, factors: FactorSet, spouse_controls: str = "husband"
) -> pd.DataFrame:
    """Exogenous covariates shared by both systems (everything except income terms)."""
    n = len(frame)
    s = "m" if spouse_controls == "husband" else "f"
    ln_wm = np.log(frame["wage_m"].to_numpy(float))
    ln_wf = np.log(frame["wage_f"].to_numpy(float))
    ln_pc_m = np.log(factors.pc_m)
    ln_pc_f = np.log(factors.pc_f)
    age = frame[f"age_{s}"].to_numpy(float)
    educ = frame[f"educ_{s}"].astype(str).to_numpy()
    cols = {
        "const": np.ones(n),
        "ln_z1": factors.ln_z[:, 0],
        "ln_z2": factors.ln_z[:, 1],
        "ln_wm": ln_wm,
        "ln_wf": ln_wf,
        "ln_wm_x_ln_wf": ln_wm * ln_wf,
        "ln_wm_sq": ln_wm**2,
        # wife's PC levels are collinear with ln z given the husband's; only their squares enter
        "ln_pc1_m": ln_pc_m[:, 0],
        "ln_pc2_m": ln_pc_m[:, 1],
        "ln_pc1_m_sq": ln_pc_m[:, 0] ** 2,
        "ln_pc2_m_sq": ln_pc_m[:, 1] ** 2,
        "ln_pc1_f_sq": ln_pc_f[:, 0] ** 2,
        "ln_pc2_f_sq": ln_pc_f[:, 1] ** 2,
        "age": age,
        "age_sq": age**2 / 100.0,
        "educ_middle": (educ == "middle").astype(float),
        "educ_high": (educ == "high").astype(float),
        "n_children": frame["n_children"].to_numpy(float),
        "married": frame["married"].astype(float).to_numpy(),
    }
    out = pd.DataFrame(cols, index=range(n))
    ratios = factors.ratios.reset_index(drop=True)
    taus = wave_dummies(frame["wave"].to_numpy())
    return pd.concat([out, ratios, taus], axis=1)


E_BLOCK = (
    "ln_pc1_m", "ln_pc2_m", "ln_pc1_m_sq", "ln_pc2_m_sq", "ln_pc1_f_sq", "ln_pc2_f_sq",
    "age", "age_sq", "educ_middle", "educ_high", "n_children", "married",
)
WAGE_BLOCK = ("ln_wm", "ln_wf", "ln_wm_x_ln_wf", "ln_wm_sq")
M_BLOCK = tuple(f"pratio_{t}_{s}" for t in TRAITS for s in ("m", "f"))


def prepare(
    frame: pd.DataFrame,
    factors: FactorSet,
    config: DemandConfig | None = None,
    extra: pd.DataFrame | None = None,
) -> DemandData:
    """Assemble :class:`DemandData` from a sample frame and its factor set.

    `extra` appends additional exogenous columns (used for the polynomial
    monotonicity regressions).
    """
    config = config or DemandConfig()
    cov = covariate_frame(frame, factors, config.spouse_controls)
    if extra is not None:
        cov = pd.concat([cov, extra.reset_index(drop=True)], axis=1)
    exog = DesignMatrix.from_frame(cov, frame["household_id"].astype(str).to_numpy())
    y = frame["y"].to_numpy(float)
    shares = frame[[f"share_{g}" for g in GOODS]].to_numpy(float)
    wage_inputs = {
        "wage_m": frame["wage_m"].to_numpy(float),
        "wage_f": frame["wage_f"].to_numpy(float),
        "age_m": frame["age_m"].to_numpy(float),
        "age_f": frame["age_f"].to_numpy(float),
        "educ_m": frame["educ_m"].astype(str).to_numpy(),
        "educ_f": frame["educ_f"].astype(str).to_numpy(),
        "nonlabor_income": frame["nonlabor_income"].to_numpy(float),
    }
    income = np.column_stack([y / INCOME_SCALE[0], y**2 / INCOME_SCALE[1]])
    return DemandData(shares, exog, income, wage_inputs, config)


def build_unconditional(
    frame: pd.DataFrame, factors: FactorSet, config: DemandConfig | None = None
) -> tuple[pd.DataFrame, DesignMatrix]:
    """Five budget shares and the full unconditional design (with income control function)."""
    bundle = prepare(frame, factors, config).unconditional()
    return bundle.outcomes, bundle.design


def build_conditional(
    frame: pd.DataFrame, factors: FactorSet, config: DemandConfig | None = None
) -> tuple[pd.DataFrame, DesignMatrix, FirstStage, list[str]]:
    """Four remaining shares and the conditional design; also the conditioning-good first stage."""
    bundle = prepare(frame, factors, config).conditional()
    for w in bundle.warnings:
        logger.warning(w)
    return bundle.outcomes, bundle.design, bundle.good_stage, bundle.warnings


def design_column_count(n_waves: int) -> int:
    """Width of the unconditional design for a sample with `n_waves` waves."""
    return 1 + 2 + 4 + len(WAGE_BLOCK) + len(E_BLOCK) + len(M_BLOCK) + (n_waves - 1)


def marginal_effects(fit: SystemFit, columns: Sequence[str] = ("ln_z1", "ln_z2")) -> pd.DataFrame:
    """Coefficient table (equations x columns) of the named regressors."""
    return pd.DataFrame(
        {c: [fit.coef(eq, c) for eq in fit.equations] for c in columns},
        index=list(fit.equations),
    )
