"""Synthetic Pareto-efficient couples with an exactly solvable allocation problem.

Each spouse has log utility ``a ln c + b ln l + g ln C``. The household
maximizes ``u_m + mu u_f`` subject to full-income budget, which gives expenditures
proportional to the preference weights; the Pareto weight ``mu`` is a clipped
logistic index in log distribution factors, log wages and log full income.

The distribution factors are built from the simulated trait scores by the same
psychometrics routines the analysis uses, so an analysis of generated data sees
exactly the factors that drove the allocations.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .estimation import substream
from .panel import EDUCATION_LEVELS, GOODS, MIN_HOURS, T, TRAIT_BOUNDS, TRAITS, add_derived
from .psychometrics import FactorSet, build_factors, fit_pca, pooled_trait_matrix, project_and_scale

logger = logging.getLogger(__name__)

VIOLATIONS = ("none", "preference_shift", "unitary")

# spread of each trait score by sex (m, f), close to the survey's
TRAIT_SD = {
    "openness": (0.26, 0.28),
    "extraversion": (0.51, 0.51),
    "agreeableness": (0.25, 0.20),
    "neuroticism": (0.57, 0.59),
    "conscientiousness": (0.27, 0.24),
    "self_esteem": (0.65, 0.72),
    "cognitive_engagement": (0.86, 0.84),
}
# which latent factor (1 or 2) drives each trait; 0 = idiosyncratic only
TRAIT_FACTOR = {
    "openness": 0,
    "extraversion": 1,
    "agreeableness": 0,
    "neuroticism": 2,
    "conscientiousness": 2,
    "self_esteem": 1,
    "cognitive_engagement": 1,
}


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimScenario:
    """Preferences, Pareto-weight index, covariate distributions and noise."""

    # log-utility weights (private good, leisure, public good) per spouse
    alpha_m: float = 0.30
    beta_m: float = 0.30
    gamma_m: float = 0.30
    alpha_f: float = 0.15
    beta_f: float = 0.50
    gamma_f: float = 0.10
    # mu = logistic(eta0 + eta1 ln z1 + eta2 ln z2 + eta3 ln wm + eta4 ln wf + eta5 ln y)
    eta: tuple[float, float, float, float, float, float] = (0.0, 1.5, 3.0, -0.5, 0.5, 0.0)
    mu_clip: tuple[float, float] = (0.01, 0.99)
    # traits: lognormal latent factors (sigma `trait_skew`, 0 = Gaussian) with
    # loading `trait_loading`; scores centred `trait_floor` sds above the scale minimum
    trait_skew: float = 1.0
    trait_loading: float = 0.95
    trait_floor: float = 1.5
    # log wage: intercept per sex + returns to education and age
    ln_wage_m: float = 2.45
    ln_wage_f: float = 2.35
    ln_wage_sd: float = 0.2
    wage_corr: float = 0.3
    educ_return: tuple[float, float] = (0.12, 0.30)
    age_slope: float = 0.01
    age_curv: float = -0.0004
    nonlabor_mean: float = 0.0
    nonlabor_sd: float = 150.0
    educ_probs_m: tuple[float, float, float] = (0.20, 0.36, 0.44)
    educ_probs_f: tuple[float, float, float] = (0.30, 0.33, 0.37)
    p_married: float = 0.8
    mean_children: float = 1.1
    waves: tuple[int, ...] = (2009, 2010, 2012, 2015, 2017)
    noise_sd: float = 0.0
    violation: str = "none"
    violation_factor: int = 1
    violation_magnitude: float = 0.0
    max_reject_share: float = 0.20

    def __post_init__(self):
        prefs = (self.alpha_m, self.beta_m, self.gamma_m, self.alpha_f, self.beta_f, self.gamma_f)
        if min(prefs) <= 0:
            raise SimulationError("utility parameters must be strictly positive")
        lo, hi = self.mu_clip
        if not 0 < lo < hi < 1:
            raise SimulationError("mu clip bounds must lie inside ]0, 1[")
        if self.violation not in VIOLATIONS:
            raise SimulationError(f"violation must be one of {VIOLATIONS}")
        if self.violation_factor not in (1, 2):
            raise SimulationError("violation_factor must be 1 or 2")
        if len(self.eta) != 6:
            raise SimulationError("eta needs six entries")

    def with_(self, **changes) -> SimScenario:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> SimScenario:
        fields = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**fields)


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def pareto_weight(scenario: SimScenario, ln_z1, ln_z2, ln_wm, ln_wf, ln_y) -> np.ndarray:
    e0, e1, e2, e3, e4, e5 = scenario.eta
    if scenario.violation == "unitary":
        index = e0 + 0.0 * np.asarray(ln_z1)
    else:
        index = e0 + e1 * ln_z1 + e2 * ln_z2 + e3 * ln_wm + e4 * ln_wf + e5 * ln_y
    return np.clip(_logistic(index), *scenario.mu_clip)


def preferences(scenario: SimScenario, ln_z1, ln_z2) -> dict[str, np.ndarray]:
    """Per-household utility weights, including any violation of the collective null."""
    ln_z1 = np.asarray(ln_z1, dtype=float)
    ones = np.ones_like(ln_z1 + np.asarray(ln_z2, dtype=float))
    p = {
        "alpha_m": scenario.alpha_m * ones,
        "beta_m": scenario.beta_m * ones,
        "gamma_m": scenario.gamma_m * ones,
        "alpha_f": scenario.alpha_f * ones,
        "beta_f": scenario.beta_f * ones,
        "gamma_f": scenario.gamma_f * ones,
    }
    kappa = scenario.violation_magnitude
    if scenario.violation == "preference_shift":
        ln_z = ln_z1 if scenario.violation_factor == 1 else np.asarray(ln_z2, dtype=float)
        p["beta_f"] = p["beta_f"] * np.exp(kappa * ln_z)
    elif scenario.violation == "unitary":
        # factors shift pooled tastes: z1 the public good, z2 private consumption
        p["gamma_m"] = p["gamma_m"] * np.exp(kappa * ln_z1)
        p["gamma_f"] = p["gamma_f"] * np.exp(kappa * ln_z1)
        p["alpha_m"] = p["alpha_m"] * np.exp(kappa * np.asarray(ln_z2))
        p["alpha_f"] = p["alpha_f"] * np.exp(kappa * np.asarray(ln_z2))
    return p


def solve_p1(prefs: dict, wage_m, wage_f, y, mu) -> dict[str, np.ndarray]:
    """Closed-form Pareto-efficient allocation under log utilities.

    With ``S = a_m + b_m + g_m + mu (a_f + b_f + g_f)`` every expenditure is its
    (mu-weighted) utility weight times ``y / S``.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(y <= 0):
        raise SimulationError("full income must be positive")
    if np.any(mu <= 0):
        raise SimulationError("Pareto weight must be positive")
    a_m, b_m, g_m = prefs["alpha_m"], prefs["beta_m"], prefs["gamma_m"]
    a_f, b_f, g_f = prefs["alpha_f"], prefs["beta_f"], prefs["gamma_f"]
    S = a_m + b_m + g_m + mu * (a_f + b_f + g_f)
    unit = y / S
    return {
        "c_m": a_m * unit,
        "c_f": mu * a_f * unit,
        "l_m": b_m * unit / np.asarray(wage_m, dtype=float),
        "l_f": mu * b_f * unit / np.asarray(wage_f, dtype=float),
        "C": (g_m + mu * g_f) * unit,
    }


def closed_form_shares(scenario: SimScenario, ln_z1, ln_z2, wage_m, wage_f, y) -> np.ndarray:
    """Noise-free budget shares (n x 5, GOODS order) as a function of the log factors."""
    ln_z1 = np.asarray(ln_z1, dtype=float)
    ln_z2 = np.asarray(ln_z2, dtype=float)
    wage_m = np.asarray(wage_m, dtype=float)
    wage_f = np.asarray(wage_f, dtype=float)
    y = np.asarray(y, dtype=float)
    mu = pareto_weight(scenario, ln_z1, ln_z2, np.log(wage_m), np.log(wage_f), np.log(y))
    alloc = solve_p1(preferences(scenario, ln_z1, ln_z2), wage_m, wage_f, y, mu)
    spend = [alloc["c_m"], alloc["c_f"], alloc["l_m"] * wage_m, alloc["l_f"] * wage_f, alloc["C"]]
    return np.column_stack(spend) / y[..., None]


def share_derivatives(
    scenario: SimScenario, ln_z1, ln_z2, wage_m, wage_f, y, rel_step: float = 1e-5
) -> np.ndarray:
    """Central finite differences of the closed-form shares w.r.t. ln z1 and ln z2.

    Returns an (n, 5, 2) array.
    """
    ln_z = [np.asarray(ln_z1, dtype=float), np.asarray(ln_z2, dtype=float)]
    out = []
    for k in range(2):
        h = rel_step * np.maximum(1.0, np.abs(ln_z[k]))
        up = [v.copy() for v in ln_z]
        dn = [v.copy() for v in ln_z]
        up[k] = up[k] + h
        dn[k] = dn[k] - h
        d = (
            closed_form_shares(scenario, up[0], up[1], wage_m, wage_f, y)
            - closed_form_shares(scenario, dn[0], dn[1], wage_m, wage_f, y)
        ) / (2 * h[..., None])
        out.append(d)
    return np.stack(out, axis=-1)


def verify_proportionality_numeric(
    scenario: SimScenario, point: dict, rel_step: float = 1e-5
) -> pd.DataFrame:
    """Ratios of factor effects on each demand, next to the Pareto-weight ratio.

    `point` holds ``z1, z2, wage_m, wage_f`` and either ``y`` or
    ``nonlabor_income``. Derivatives are taken w.r.t. the factor levels by
    central differences with step ``rel_step * z``.
    """
    z = np.array([point["z1"], point["z2"]], dtype=float)
    wm, wf = float(point["wage_m"]), float(point["wage_f"])
    y = float(point["y"]) if "y" in point else (wm + wf) * T + float(point["nonlabor_income"])

    def demands(zv):
        ln1, ln2 = np.log(zv[0]), np.log(zv[1])
        mu = pareto_weight(scenario, ln1, ln2, np.log(wm), np.log(wf), np.log(y))
        alloc = solve_p1(preferences(scenario, ln1, ln2), wm, wf, y, mu)
        return np.array([alloc["c_m"], alloc["c_f"], alloc["l_m"], alloc["l_f"], alloc["C"]]), float(mu)

    grads = np.zeros((5, 2))
    dmu = np.zeros(2)
    for k in range(2):
        h = rel_step * z[k]
        e = np.zeros(2)
        e[k] = h
        gu, mu_u = demands(z + e)
        gd, mu_d = demands(z - e)
        grads[:, k] = (gu - gd) / (2 * h)
        dmu[k] = (mu_u - mu_d) / (2 * h)
    if abs(dmu[1]) < 1e-12:
        raise SimulationError("uninformative point: Pareto weight does not respond to z2")
    ratios = grads[:, 0] / grads[:, 1]
    return pd.DataFrame(
        {
            "d_dz1": grads[:, 0],
            "d_dz2": grads[:, 1],
            "ratio": ratios,
            "mu_ratio": dmu[0] / dmu[1],
        },
        index=["c_m", "c_f", "l_m", "l_f", "C"],
    )


# --- population generator -------------------------------------------------


def _latent(rng: np.random.Generator, shape, skew: float) -> np.ndarray:
    g = rng.standard_normal(shape)
    if skew == 0:
        return g
    v = np.exp(skew**2)
    return (np.exp(skew * g) - np.sqrt(v)) / np.sqrt((v - 1) * v)


def _draw_traits(sc: SimScenario, rng: np.random.Generator, n: int, sex: int) -> dict[str, np.ndarray]:
    """Bounded trait scores from two standardized (optionally right-skewed) factors."""
    f = _latent(rng, (n, 2), sc.trait_skew)
    u = rng.standard_normal((n, len(TRAITS)))
    out = {}
    for j, t in enumerate(TRAITS):
        k = TRAIT_FACTOR[t]
        lam = sc.trait_loading if k else 0.0
        common = f[:, k - 1] if k else 0.0
        latent = lam * common + np.sqrt(1 - lam**2) * u[:, j]
        lo, hi = TRAIT_BOUNDS[t]
        sd = TRAIT_SD[t][sex]
        out[t] = np.clip(lo + sd * (sc.trait_floor + latent), lo, hi)
    return out


def _draw_economics(sc: SimScenario, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    age_m = rng.integers(25, 66, size=n).astype(float)
    age_f = np.clip(np.round(age_m - 2 + 3 * rng.standard_normal(n)), 25, 65)
    educ_m = rng.choice(3, size=n, p=sc.educ_probs_m)
    educ_f = rng.choice(3, size=n, p=sc.educ_probs_f)
    shocks = rng.standard_normal((n, 2))
    e_m = shocks[:, 0]
    e_f = sc.wage_corr * shocks[:, 0] + np.sqrt(1 - sc.wage_corr**2) * shocks[:, 1]
    r_mid, r_high = sc.educ_return

    def ln_wage(base, educ, age, e):
        return (
            base
            + r_mid * (educ == 1)
            + r_high * (educ == 2)
            + sc.age_slope * (age - 45)
            + sc.age_curv * (age - 45) ** 2
            + sc.ln_wage_sd * e
        )

    return {
        "age_m": age_m,
        "age_f": age_f,
        "educ_m": educ_m,
        "educ_f": educ_f,
        "wage_m": np.exp(ln_wage(sc.ln_wage_m, educ_m, age_m, e_m)),
        "wage_f": np.exp(ln_wage(sc.ln_wage_f, educ_f, age_f, e_f)),
        "nonlabor_income": sc.nonlabor_mean + sc.nonlabor_sd * rng.standard_normal(n),
        "n_children": np.minimum(rng.poisson(sc.mean_children, size=n), 5).astype(float),
        "married": (rng.random(n) < sc.p_married).astype(float),
        "wave": rng.choice(np.asarray(sc.waves), size=n),
    }


def _interior(shares: np.ndarray, wage_m, wage_f, y) -> np.ndarray:
    """Rows whose allocation respects positivity and the minimum-hours rule."""
    l_m = shares[:, 2] * y / wage_m
    l_f = shares[:, 3] * y / wage_f
    return (
        np.all(shares > 0, axis=1)
        & (l_m > 0)
        & (l_f > 0)
        & (T - l_m >= MIN_HOURS)
        & (T - l_f >= MIN_HOURS)
    )


@dataclass
class SimData:
    """Generated sample: analysis frame, ground-truth sidecar and the factors used."""

    frame: pd.DataFrame
    truth: pd.DataFrame
    factors: FactorSet
    scenario: SimScenario
    rejections: int = 0
    noise_redraws: int = 0
    meta: dict = field(default_factory=dict)

    def write(self, panel_path: str | Path, truth_path: str | Path | None = None) -> None:
        from .panel import write_panel_csv

        write_panel_csv(self.frame, panel_path)
        if truth_path is not None:
            self.truth.to_csv(truth_path, index=False, float_format="%.17g", lineterminator="\n")


def _trait_frame(traits_m: dict, traits_f: dict) -> pd.DataFrame:
    return pd.DataFrame(
        {**{f"{t}_m": traits_m[t] for t in TRAITS}, **{f"{t}_f": traits_f[t] for t in TRAITS}}
    )


def _log_factors(trait_frame: pd.DataFrame):
    pca = fit_pca(pooled_trait_matrix(trait_frame), TRAITS, 2)
    pc_m = project_and_scale(pca, trait_frame[[f"{t}_m" for t in TRAITS]].to_numpy())
    pc_f = project_and_scale(pca, trait_frame[[f"{t}_f" for t in TRAITS]].to_numpy())
    return pca, np.log(pc_f / pc_m)


def generate(
    scenario: SimScenario, n: int, seed: int, econ_attempts: int = 20, max_rounds: int = 20
) -> SimData:
    """Draw `n` couples, solve their allocation problem and add share noise.

    Deterministic in `seed`. A couple whose optimum violates the minimum-hours
    rule first gets fresh economic covariates; if that fails `econ_attempts`
    times its trait scores are redrawn as well and the factor model is refit
    on the updated sample. More than ``max_reject_share`` first-pass
    rejections raise :class:`SimulationError`.
    """
    if n < 8:
        raise SimulationError("n must be at least 8 (the factor model needs it)")
    rng = substream(seed, 0)
    traits_m = _draw_traits(scenario, rng, n, 0)
    traits_f = _draw_traits(scenario, rng, n, 1)
    econ = _draw_economics(scenario, rng, n)

    def shares_for(e, ln_z):
        y = (e["wage_m"] + e["wage_f"]) * T + e["nonlabor_income"]
        ok_y = y > 0
        y_safe = np.where(ok_y, y, 1.0)
        s = closed_form_shares(scenario, ln_z[:, 0], ln_z[:, 1], e["wage_m"], e["wage_f"], y_safe)
        return y_safe, s, ok_y & _interior(s, e["wage_m"], e["wage_f"], y_safe)

    rejected = None
    for rnd in range(max_rounds):
        trait_frame = _trait_frame(traits_m, traits_f)
        pca, ln_z = _log_factors(trait_frame)
        y, true_shares, ok = shares_for(econ, ln_z)
        if rejected is None:
            rejected = int(np.sum(~ok))
            if rejected > scenario.max_reject_share * n:
                raise SimulationError(
                    f"scenario too close to corners: {rejected} of {n} draws rejected"
                )
        for attempt in range(1, econ_attempts + 1):
            if np.all(ok):
                break
            for i in np.flatnonzero(~ok):
                fresh = _draw_economics(scenario, substream(seed, 1, rnd, int(i), attempt), 1)
                for k, v in fresh.items():
                    econ[k][i] = v[0]
            y, true_shares, ok = shares_for(econ, ln_z)
        if np.all(ok):
            break
        for i in np.flatnonzero(~ok):
            r = substream(seed, 4, rnd, int(i))
            for sex, store in ((0, traits_m), (1, traits_f)):
                fresh = _draw_traits(scenario, r, 1, sex)
                for t in TRAITS:
                    store[t][i] = fresh[t][0]
    else:
        raise SimulationError("scenario too close to corners: redraws exhausted")
    if rejected:
        logger.info("generate: %d of %d draws rejected at corners", rejected, n)

    noise_redraws = 0
    if scenario.noise_sd > 0:
        eps = substream(seed, 2).standard_normal((n, len(GOODS)))
        shares = true_shares + scenario.noise_sd * eps
        ok = _interior(shares, econ["wage_m"], econ["wage_f"], y)
        attempt = 0
        while not np.all(ok):
            attempt += 1
            if attempt > 200:
                raise SimulationError("share noise pushes allocations outside the interior")
            for i in np.flatnonzero(~ok):
                noise_redraws += 1
                e = substream(seed, 3, int(i), attempt).standard_normal(len(GOODS))
                shares[i] = true_shares[i] + scenario.noise_sd * e
            ok = _interior(shares, econ["wage_m"], econ["wage_f"], y)
    else:
        shares = true_shares

    mu = pareto_weight(
        scenario, ln_z[:, 0], ln_z[:, 1], np.log(econ["wage_m"]), np.log(econ["wage_f"]), np.log(y)
    )
    alloc = solve_p1(preferences(scenario, ln_z[:, 0], ln_z[:, 1]), econ["wage_m"], econ["wage_f"], y, mu)

    width = len(str(n))
    frame = pd.DataFrame(
        {
            "household_id": [f"h{i:0{width}d}" for i in range(n)],
            "wave": econ["wave"].astype(int),
            "wage_m": econ["wage_m"],
            "wage_f": econ["wage_f"],
            "hours_m": T - shares[:, 2] * y / econ["wage_m"],
            "hours_f": T - shares[:, 3] * y / econ["wage_f"],
            "nonlabor_income": econ["nonlabor_income"],
            "cons_private_m": shares[:, 0] * y,
            "cons_private_f": shares[:, 1] * y,
            "cons_public": shares[:, 4] * y,
            "age_m": econ["age_m"],
            "age_f": econ["age_f"],
            "educ_m": [EDUCATION_LEVELS[i] for i in econ["educ_m"]],
            "educ_f": [EDUCATION_LEVELS[i] for i in econ["educ_f"]],
            "n_children": econ["n_children"].astype(int),
            "married": econ["married"].astype(bool),
            "cons_private_household": np.nan,
        }
    )
    frame = pd.concat([frame, trait_frame], axis=1)
    frame = add_derived(frame)
    factors = build_factors(frame, pca)

    truth = pd.DataFrame(
        {
            "household_id": frame["household_id"],
            "wave": frame["wave"],
            "mu": mu,
            "z1": np.exp(ln_z[:, 0]),
            "z2": np.exp(ln_z[:, 1]),
            **{k: alloc[k] for k in ("c_m", "c_f", "l_m", "l_f", "C")},
            **{f"true_share_{g}": true_shares[:, j] for j, g in enumerate(GOODS)},
        }
    )
    return SimData(
        frame=frame,
        truth=truth,
        factors=factors,
        scenario=scenario,
        rejections=rejected,
        noise_redraws=noise_redraws,
    )
