"""Personality scales, principal components and distribution factors."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .panel import EDUCATION_LEVELS, TRAIT_BOUNDS, TRAITS

logger = logging.getLogger(__name__)

EIGEN_TOL = 1e-12
CUTOFF = 0.8


class PsychometricsError(ValueError):
    pass


@dataclass(frozen=True)
class TraitScore:
    trait: str
    value: float
    imputed: bool = False


def score_scale(
    item_responses: Sequence[float],
    reverse_coded: Sequence[int] = (),
    bounds: tuple[float, float] = (1.0, 5.0),
    trait: str = "",
) -> TraitScore:
    """Mean of item responses after mapping reverse-coded items r -> lo + hi - r."""
    items = np.asarray(item_responses, dtype=float)
    if items.size == 0:
        raise PsychometricsError("at least one item is required")
    lo, hi = bounds
    if np.any(items < lo) or np.any(items > hi) or not np.all(np.isfinite(items)):
        raise PsychometricsError(f"item response outside [{lo:g}, {hi:g}]")
    items = items.copy()
    rev = list(reverse_coded)
    items[rev] = lo + hi - items[rev]
    return TraitScore(trait, float(items.mean()))


def cronbach_alpha(item_matrix: np.ndarray) -> float:
    """Internal consistency of an n x k item matrix."""
    x = np.asarray(item_matrix, dtype=float)
    n, k = x.shape
    if k < 2 or n < 3:
        raise PsychometricsError("need k >= 2 items and n >= 3 respondents")
    totals = x.sum(axis=1)
    # constant totals can leave a round-off variance, so compare on the data's scale
    if np.ptp(totals) <= 1e-10 * max(1.0, np.abs(totals).max()):
        raise PsychometricsError("zero total variance")
    total_var = totals.var(ddof=1)
    return float(k / (k - 1) * (1 - x.var(axis=0, ddof=1).sum() / total_var))


def impute_missing(
    history: Mapping[int, float | None], method: str = "mean"
) -> dict[int, TraitScore]:
    """Fill missing waves of one person-trait with the mean (or median) of observed waves."""
    observed = [v for v in history.values() if v is not None and not np.isnan(v)]
    if not observed:
        raise PsychometricsError("no observed waves")
    if method == "mean":
        fill = float(np.mean(observed))
    elif method == "median":
        fill = float(np.median(observed))
    else:
        raise PsychometricsError(f"unknown imputation method {method!r}")
    out = {}
    for wave, v in history.items():
        if v is None or np.isnan(v):
            out[wave] = TraitScore("", fill, imputed=True)
        else:
            out[wave] = TraitScore("", float(v), imputed=False)
    return out


def impute_frame(frame: pd.DataFrame, method: str = "mean") -> tuple[pd.DataFrame, list[str]]:
    """Impute missing trait scores per (household, spouse, trait) across waves.

    Couples with a spouse-trait that is never observed are dropped; their
    household ids are returned. Adds ``imputed_m`` / ``imputed_f`` flags
    (any trait imputed for that spouse in that wave).
    """
    if method not in ("mean", "median"):
        raise PsychometricsError(f"unknown imputation method {method!r}")
    out = frame.copy()
    cols = [f"{t}_{s}" for s in ("m", "f") for t in TRAITS]
    for c in cols:
        if c not in out.columns:
            out[c] = np.nan
    grouped = out.groupby("household_id", sort=False)[cols]
    fill = grouped.transform(method)
    never = fill.isna().any(axis=1)
    dropped = sorted(out.loc[never, "household_id"].astype(str).unique().tolist())
    for hid in dropped:
        logger.info("household %s dropped: a personality trait is never observed", hid)
    for s in ("m", "f"):
        sc = [f"{t}_{s}" for t in TRAITS]
        out[f"imputed_{s}"] = out[sc].isna().any(axis=1)
    out[cols] = out[cols].fillna(fill)
    out = out.loc[~never].reset_index(drop=True)
    return out, dropped


@dataclass
class PcaModel:
    """Correlation-matrix PCA over pooled individuals.

    ``eigenvectors`` are unit-norm (trait x component); ``loadings`` are the
    trait-component correlations ``eigenvector * sqrt(eigenvalue)``.
    """

    traits: tuple[str, ...]
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    all_eigenvalues: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    scale_bounds: np.ndarray  # (n_components, 2) raw-score min/max on the fitting sample

    @property
    def n_components(self) -> int:
        return self.eigenvectors.shape[1]

    @property
    def loadings(self) -> np.ndarray:
        return self.eigenvectors * np.sqrt(self.eigenvalues)

    @property
    def variance_shares(self) -> np.ndarray:
        return self.eigenvalues / len(self.traits)

    def raw_scores(self, scores: np.ndarray) -> np.ndarray:
        z = (np.asarray(scores, dtype=float) - self.means) / self.sds
        return z @ self.eigenvectors

    def cutoff_table(self, cutoff: float = CUTOFF) -> pd.DataFrame:
        """Signs of loadings within `cutoff` of each component's largest |loading|."""
        L = self.loadings
        table = {}
        for k in range(self.n_components):
            col = L[:, k]
            big = np.abs(col) >= cutoff * np.abs(col).max()
            table[f"PC{k + 1}"] = [
                ("+" if v > 0 else "-") if keep else "" for v, keep in zip(col, big)
            ]
        return pd.DataFrame(table, index=list(self.traits))

    def report(self) -> str:
        """Text table: cut-off signs, eigenvalues and variance shares."""
        tab = self.cutoff_table()
        width = max(len(t) for t in self.traits) + 4
        head = "Personality".ljust(width) + "".join(c.center(10) for c in tab.columns)
        lines = [head, "-" * len(head)]
        for i, t in enumerate(self.traits):
            lines.append(f"{i + 1}. {t}".ljust(width) + "".join(s.center(10) for s in tab.loc[t]))
        lines.append("-" * len(head))
        lines.append("Eigenvalue".ljust(width) + "".join(f"{v:.2f}".center(10) for v in self.eigenvalues))
        lines.append(
            "Variance share".ljust(width)
            + "".join(f"{100 * v:.2f}%".center(10) for v in self.variance_shares)
        )
        lines.append(
            f"Explained share: {100 * self.variance_shares.sum():.2f}%. Signs mark loadings "
            f"at least {CUTOFF:g} x the largest |loading|; each component is oriented so its "
            "largest loading is positive."
        )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "traits": list(self.traits),
            "n_components": self.n_components,
            "eigenvectors": self.eigenvectors.ravel().tolist(),
            "loadings": self.loadings.ravel().tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "all_eigenvalues": self.all_eigenvalues.tolist(),
            "variance_shares": self.variance_shares.tolist(),
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "scale_bounds": self.scale_bounds.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> PcaModel:
        p = len(d["traits"])
        k = int(d["n_components"])
        return cls(
            traits=tuple(d["traits"]),
            eigenvectors=np.asarray(d["eigenvectors"], dtype=float).reshape(p, k),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            all_eigenvalues=np.asarray(d["all_eigenvalues"], dtype=float),
            means=np.asarray(d["means"], dtype=float),
            sds=np.asarray(d["sds"], dtype=float),
            scale_bounds=np.asarray(d["scale_bounds"], dtype=float).reshape(k, 2),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> PcaModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def orient(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the entry with the largest magnitude is positive."""
    vectors = vectors.copy()
    for k in range(vectors.shape[1]):
        i = int(np.argmax(np.abs(vectors[:, k])))
        if vectors[i, k] < 0:
            vectors[:, k] = -vectors[:, k]
    return vectors


def principal_axes(corr: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Top eigenpairs of a correlation matrix, oriented; eigenvalues descending."""
    w, v = np.linalg.eigh(corr)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    return w, orient(v[:, :n_components])


def fit_pca(
    scores: np.ndarray, traits: Sequence[str] = TRAITS, n_components: int = 2
) -> PcaModel:
    """PCA on the standardized trait matrix (rows = individuals of both sexes)."""
    x = np.asarray(scores, dtype=float)
    n, p = x.shape
    if n < 8:
        raise PsychometricsError("need at least 8 individuals")
    if not np.all(np.isfinite(x)):
        raise PsychometricsError("non-finite trait scores")
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    if np.any(sds == 0):
        raise PsychometricsError("a trait has zero variance")
    z = (x - means) / sds
    corr = z.T @ z / (n - 1)
    w, v = principal_axes(corr, n_components)
    if w[-1] <= EIGEN_TOL * w[0]:
        raise PsychometricsError("rank-deficient correlation matrix")
    raw = z @ v
    bounds = np.column_stack([raw.min(axis=0), raw.max(axis=0)])
    return PcaModel(
        traits=tuple(traits),
        eigenvectors=v,
        eigenvalues=w[:n_components].copy(),
        all_eigenvalues=w,
        means=means,
        sds=sds,
        scale_bounds=bounds,
    )


def rescale(raw: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Map raw component scores to [1, 100] using frozen (min, max) per component."""
    raw = np.asarray(raw, dtype=float)
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(hi <= lo):
        raise PsychometricsError("scale bounds have max == min")
    return np.clip(1.0 + 99.0 * (raw - lo) / (hi - lo), 1.0, 100.0)


def project_and_scale(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    return rescale(model.raw_scores(scores), model.scale_bounds)


def pooled_trait_matrix(frame: pd.DataFrame) -> np.ndarray:
    """Stack husbands' then wives' trait rows (2n x 7)."""
    m = frame[[f"{t}_m" for t in TRAITS]].to_numpy(dtype=float)
    f = frame[[f"{t}_f" for t in TRAITS]].to_numpy(dtype=float)
    return np.vstack([m, f])


@dataclass
class FactorSet:
    """Per couple-wave distribution factors and personality controls."""

    z: np.ndarray  # (n, 2) ratio PC_f / PC_m
    pc_m: np.ndarray  # (n, 2) scaled levels
    pc_f: np.ndarray
    fractions: pd.DataFrame  # r_p per trait
    ratios: pd.DataFrame  # personality_ratio_<trait>_{m,f}
    pca: PcaModel | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ln_z(self) -> np.ndarray:
        return np.log(self.z)

    def to_frame(self) -> pd.DataFrame:
        out = pd.DataFrame(
            {
                "z1": self.z[:, 0],
                "z2": self.z[:, 1],
                "ln_z1": self.ln_z[:, 0],
                "ln_z2": self.ln_z[:, 1],
                "pc1_m": self.pc_m[:, 0],
                "pc2_m": self.pc_m[:, 1],
                "pc1_f": self.pc_f[:, 0],
                "pc2_f": self.pc_f[:, 1],
            }
        )
        return pd.concat([out, self.fractions, self.ratios], axis=1)


def female_fractions(frame: pd.DataFrame) -> pd.DataFrame:
    cols = {}
    for t in TRAITS:
        pf = frame[f"{t}_f"].to_numpy(dtype=float)
        pm = frame[f"{t}_m"].to_numpy(dtype=float)
        cols[f"r_{t}"] = pf / (pf + pm)
    return pd.DataFrame(cols, index=range(len(frame)))


def _count_matches(
    key_pool: np.ndarray, age_pool: np.ndarray, key_query: np.ndarray, age_query: np.ndarray, band: float
) -> np.ndarray:
    """For each query, count pool members with equal key and |age diff| <= band."""
    counts = np.zeros(key_query.shape[0], dtype=int)
    for key in np.unique(key_query):
        pool_ages = np.sort(age_pool[key_pool == key])
        sel = key_query == key
        a = age_query[sel]
        counts[sel] = np.searchsorted(pool_ages, a + band, side="right") - np.searchsorted(
            pool_ages, a - band, side="left"
        )
    return counts


def personality_ratios(
    frame: pd.DataFrame, age_band: float = 5.0, n_bins: int = 5
) -> pd.DataFrame:
    """Marriage-market personality ratios per household and trait.

    For the husband: (1 + #husbands in his trait bin, education level and age
    band) / (1 + #wives matching the same cell); the wife's ratio is the
    mirror image. Trait bins are quantiles of the pooled (both sexes) scores.
    """
    educ_code = {e: i for i, e in enumerate(EDUCATION_LEVELS)}
    em = frame["educ_m"].map(educ_code).to_numpy()
    ef = frame["educ_f"].map(educ_code).to_numpy()
    am = frame["age_m"].to_numpy(dtype=float)
    af = frame["age_f"].to_numpy(dtype=float)
    out = {}
    for t in TRAITS:
        sm = frame[f"{t}_m"].to_numpy(dtype=float)
        sf = frame[f"{t}_f"].to_numpy(dtype=float)
        pooled = np.concatenate([sm, sf])
        edges = np.quantile(pooled, np.linspace(0, 1, n_bins + 1)[1:-1])
        bm = np.searchsorted(edges, sm, side="right")
        bf = np.searchsorted(edges, sf, side="right")
        key_m = bm * len(EDUCATION_LEVELS) + em
        key_f = bf * len(EDUCATION_LEVELS) + ef
        husbands_like_m = _count_matches(key_m, am, key_m, am, age_band)
        wives_like_m = _count_matches(key_f, af, key_m, am, age_band)
        wives_like_f = _count_matches(key_f, af, key_f, af, age_band)
        husbands_like_f = _count_matches(key_m, am, key_f, af, age_band)
        out[f"pratio_{t}_m"] = (1.0 + husbands_like_m) / (1.0 + wives_like_m)
        out[f"pratio_{t}_f"] = (1.0 + wives_like_f) / (1.0 + husbands_like_f)
    return pd.DataFrame(out, index=range(len(frame)))


def build_factors(
    frame: pd.DataFrame,
    model: PcaModel | None = None,
    n_components: int = 2,
    age_band: float = 5.0,
    n_bins: int = 5,
) -> FactorSet:
    """Distribution factors, PC levels, female fractions and personality ratios.

    When `model` is None the PCA is fitted on the pooled husbands and wives of
    `frame`.
    """
    traits = frame[[f"{t}_{s}" for s in ("m", "f") for t in TRAITS]]
    if traits.isna().any().any():
        raise PsychometricsError("trait scores missing; impute first")
    if model is None:
        model = fit_pca(pooled_trait_matrix(frame), TRAITS, n_components)
    pc_m = project_and_scale(model, frame[[f"{t}_m" for t in TRAITS]].to_numpy(dtype=float))
    pc_f = project_and_scale(model, frame[[f"{t}_f" for t in TRAITS]].to_numpy(dtype=float))
    return FactorSet(
        z=pc_f / pc_m,
        pc_m=pc_m,
        pc_f=pc_f,
        fractions=female_fractions(frame),
        ratios=personality_ratios(frame, age_band=age_band, n_bins=n_bins),
        pca=model,
    )

