"""Intrahousehold inequality from the cost of each spouse's consumption bundle.

RICEB^i = (c^i + w^i l^i + C) / y, and inequality is RICEB^f - RICEB^m.
Couples are grouped by the wife's share of a trait within the couple and
the groups are compared through kernel densities and a bootstrap t-test.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .estimation import substream
from .panel import TRAITS
from .psychometrics import female_fractions

logger = logging.getLogger(__name__)

GRID_POINTS = 512
GROUP_PERCENTILES = (20.0, 45.0, 55.0, 80.0)
MIN_COUPLES = 20


class InequalityError(ValueError):
    pass


@dataclass(frozen=True)
class RicebPair:
    riceb_f: np.ndarray
    riceb_m: np.ndarray

    @property
    def inequality(self) -> np.ndarray:
        return self.riceb_f - self.riceb_m


def riceb(cons_private, wage, leisure, cons_public, y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise InequalityError("RICEB needs positive full income")
    return (np.asarray(cons_private) + np.asarray(wage) * np.asarray(leisure) + np.asarray(cons_public)) / y


def compute_riceb(frame: pd.DataFrame) -> RicebPair:
    """Both spouses' RICEB from a frame carrying derived leisure and full income."""
    f = frame
    return RicebPair(
        riceb_f=riceb(f["cons_private_f"], f["wage_f"], f["leisure_f"], f["cons_public"], f["y"]),
        riceb_m=riceb(f["cons_private_m"], f["wage_m"], f["leisure_m"], f["cons_public"], f["y"]),
    )


@dataclass
class FractionGroups:
    trait: str
    high: np.ndarray  # row indices, r > p80
    mid: np.ndarray  # p45 <= r <= p55
    low: np.ndarray  # r < p20
    cutoffs: tuple[float, float, float, float]
    warnings: list[str] = field(default_factory=list)

    def sizes(self) -> dict[str, int]:
        return {"high": len(self.high), "mid": len(self.mid), "low": len(self.low)}


def group_by_fraction(fractions, trait: str = "") -> FractionGroups:
    """Split couples by the percentile rule: strict above p80, closed [p45, p55], strict below p20."""
    r = np.asarray(fractions, dtype=float)
    if r.size < MIN_COUPLES:
        raise InequalityError(f"need at least {MIN_COUPLES} couples, got {r.size}")
    if np.ptp(r) == 0:
        raise InequalityError("degenerate fraction distribution")
    p20, p45, p55, p80 = (float(v) for v in np.percentile(r, GROUP_PERCENTILES))
    groups = FractionGroups(
        trait=trait,
        high=np.flatnonzero(r > p80),
        mid=np.flatnonzero((r >= p45) & (r <= p55)),
        low=np.flatnonzero(r < p20),
        cutoffs=(p20, p45, p55, p80),
    )
    for name, size in groups.sizes().items():
        if size < 2:
            groups.warnings.append(f"{trait or 'fraction'}: group '{name}' has {size} couple(s)")
    return groups


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde(values, grid_points: int = GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE with Silverman's bandwidth on a grid spanning the data +/- 3 bandwidths."""
    x = np.asarray(values, dtype=float)
    if x.size < 5:
        raise InequalityError("kernel density needs at least 5 values")
    if np.ptp(x) == 0:
        raise InequalityError("kernel density needs positive variance")
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_points)
    u = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * u**2).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return grid, dens


def welch_t(a: np.ndarray, b: np.ndarray) -> float:
    va, vb = a.var(ddof=1) if a.size > 1 else 0.0, b.var(ddof=1) if b.size > 1 else 0.0
    se2 = va / a.size + vb / b.size
    if se2 <= 0:
        if a.mean() == b.mean():
            return 0.0
        raise InequalityError("zero pooled variance")
    return float((a.mean() - b.mean()) / np.sqrt(se2))


@dataclass(frozen=True)
class MeanTest:
    t: float
    p_value: float
    difference_pct: float  # (mean a - mean b) x 100
    n_a: int
    n_b: int
    B: int
    resampling: str = "recentered null"

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "p": self.p_value,
            "difference_pct": self.difference_pct,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "B": self.B,
            "resampling": self.resampling,
        }


def bootstrap_mean_test(a, b, B: int, seed: int, stream: tuple[int, ...] = ()) -> MeanTest:
    """Welch t for equal means with a bootstrap p-value under the recentered null.

    Each group is shifted to the pooled mean and resampled with replacement;
    ``p = (1 + #{|t*| >= |t|}) / (B + 1)``. Replication b draws from
    ``substream(seed, *stream, b)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InequalityError("both groups must be nonempty")
    if B < 99:
        raise InequalityError("B must be at least 99")
    if np.ptp(np.r_[a, b]) == 0:
        if a.mean() == b.mean():
            return MeanTest(0.0, 1.0, 0.0, a.size, b.size, B)
        raise InequalityError("zero pooled variance")
    t_hat = welch_t(a, b)
    pooled = np.r_[a, b].mean()
    a0, b0 = a - a.mean() + pooled, b - b.mean() + pooled
    count = 0
    for rep in range(B):
        rng = substream(seed, *stream, rep)
        sa = a0[rng.integers(0, a.size, a.size)]
        sb = b0[rng.integers(0, b.size, b.size)]
        try:
            t_star = welch_t(sa, sb)
        except InequalityError:
            t_star = 0.0
        count += abs(t_star) >= abs(t_hat)
    p = (1 + count) / (B + 1)
    return MeanTest(t_hat, p, 100.0 * (a.mean() - b.mean()), a.size, b.size, B)


def _p(p: float) -> str:
    s = f"{p:.3f}"
    return s[1:] if s.startswith("0.") else s


@dataclass
class InequalityReport:
    riceb: RicebPair
    groups: dict[str, FractionGroups]
    tests: dict[str, MeanTest]
    densities: dict[str, dict[str, tuple[np.ndarray, np.ndarray]]]
    summary: pd.DataFrame  # mean, sd, min, max per RICEB column
    warnings: list[str] = field(default_factory=list)

    def table(self) -> str:
        lines = [
            f"{'':<22}{'t':>9}{'p':>8}{'diff %':>9}{'high':>7}{'mid':>6}{'low':>6}",
            "-" * 67,
        ]
        for t, res in self.tests.items():
            g = self.groups[t].sizes()
            lines.append(
                f"{t:<22}{res.t:>9.3f}{_p(res.p_value):>8}{res.difference_pct:>9.3f}"
                f"{g['high']:>7}{g['mid']:>6}{g['low']:>6}"
            )
        lines.append("-" * 67)
        lines.append("t and p: Welch t-test, high vs low fraction, bootstrap under the recentered null")
        lines.append("diff %: mean inequality (high - low) x 100")
        return "\n".join(lines + list(self.warnings) + [""])

    def to_dict(self) -> dict:
        return {
            "tests": {t: r.to_dict() for t, r in self.tests.items()},
            "groups": {t: {**g.sizes(), "cutoffs": list(g.cutoffs)} for t, g in self.groups.items()},
            "summary": {
                c: {k: (None if pd.isna(v) else float(v)) for k, v in self.summary[c].items()}
                for c in self.summary.columns
            },
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_densities(self, directory: str | Path) -> list[Path]:
        out = []
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for trait, by_group in self.densities.items():
            for group, (grid, dens) in by_group.items():
                path = directory / f"kde_{trait}_{group}.csv"
                pd.DataFrame({"grid": grid, "density": dens}).to_csv(
                    path, index=False, float_format="%.10g", lineterminator="\n"
                )
                out.append(path)
        return out


def riceb_summary(pair: RicebPair) -> pd.DataFrame:
    cols = {"riceb_f": pair.riceb_f, "riceb_m": pair.riceb_m, "inequality": pair.inequality}
    return pd.DataFrame(
        {
            k: {
                "mean": float(np.mean(v)),
                "sd": float(np.std(v, ddof=1)) if len(v) > 1 else np.nan,
                "min": float(np.min(v)),
                "max": float(np.max(v)),
            }
            for k, v in cols.items()
        }
    )


def analyze(frame: pd.DataFrame, B: int, seed: int, traits=TRAITS) -> InequalityReport:
    """Groups, densities and equal-means tests for every trait."""
    pair = compute_riceb(frame)
    ineq = np.asarray(pair.inequality)
    fractions = female_fractions(frame)
    groups, tests, dens, warnings = {}, {}, {}, []
    for k, t in enumerate(traits):
        g = group_by_fraction(fractions[f"r_{t}"].to_numpy(), t)
        groups[t] = g
        warnings.extend(g.warnings)
        dens[t] = {}
        for name in ("high", "mid", "low"):
            vals = ineq[getattr(g, name)]
            if vals.size >= 5 and np.ptp(vals) > 0:
                dens[t][name] = kde(vals)
        if g.high.size and g.low.size:
            tests[t] = bootstrap_mean_test(ineq[g.high], ineq[g.low], B, seed, stream=(7, k))
    return InequalityReport(pair, groups, tests, dens, riceb_summary(pair), warnings)
