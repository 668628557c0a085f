"""Couple-level panel ingestion and derived economic variables.

Every downstream module consumes the tabular *sample frame* produced by
:func:`to_frame`: one row per couple-wave, canonical column names, plus the
derived full income, leisure and budget shares.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

#: weekly time endowment per spouse (hours)
T = 112.0
MIN_HOURS = 10.0
AGE_RANGE = (25.0, 65.0)

TRAITS = (
    "openness",
    "extraversion",
    "agreeableness",
    "neuroticism",
    "conscientiousness",
    "self_esteem",
    "cognitive_engagement",
)
TRAIT_BOUNDS = {
    "openness": (1.0, 5.0),
    "extraversion": (1.0, 5.0),
    "agreeableness": (1.0, 5.0),
    "neuroticism": (1.0, 5.0),
    "conscientiousness": (1.0, 5.0),
    "self_esteem": (1.0, 7.0),
    "cognitive_engagement": (1.0, 7.0),
}
EDUCATION_LEVELS = ("low", "middle", "high")
GOODS = ("cm", "cf", "lm", "lf", "C")

SCALAR_FIELDS = (
    "household_id",
    "wave",
    "wage_m",
    "wage_f",
    "hours_m",
    "hours_f",
    "nonlabor_income",
    "cons_private_m",
    "cons_private_f",
    "cons_public",
    "age_m",
    "age_f",
    "educ_m",
    "educ_f",
    "n_children",
    "married",
)
OPTIONAL_FIELDS = ("cons_private_household",)
TRAIT_FIELDS = tuple(f"{t}_{s}" for s in ("m", "f") for t in TRAITS)
CANONICAL_COLUMNS = SCALAR_FIELDS + OPTIONAL_FIELDS + TRAIT_FIELDS

Source = Union[str, Path, bytes, IO[str], IO[bytes]]


class PanelError(ValueError):
    """Malformed input or a violated hard precondition."""


@dataclass(frozen=True)
class HouseholdObservation:
    household_id: str
    wave: int
    wage_m: float
    wage_f: float
    hours_m: float
    hours_f: float
    nonlabor_income: float
    cons_private_m: float
    cons_private_f: float
    cons_public: float
    age_m: float
    age_f: float
    educ_m: str
    educ_f: str
    n_children: int
    married: bool
    trait_scores_m: Mapping[str, float | None] = field(default_factory=dict)
    trait_scores_f: Mapping[str, float | None] = field(default_factory=dict)
    cons_private_household: float | None = None


@dataclass(frozen=True)
class DerivedVars:
    full_income: float
    leisure_m: float
    leisure_f: float
    shares: Mapping[str, float]


@dataclass(frozen=True)
class Rejection:
    line: int
    household_id: str
    wave: str
    reasons: tuple[str, ...]


def default_schema() -> dict[str, str]:
    """Identity column map: canonical field name -> CSV header."""
    return {name: name for name in CANONICAL_COLUMNS}


def validate(obs: HouseholdObservation) -> list[str]:
    """Return the list of invariant violations (empty when the row is valid)."""
    reasons = []
    for s in ("m", "f"):
        wage = getattr(obs, f"wage_{s}")
        hours = getattr(obs, f"hours_{s}")
        age = getattr(obs, f"age_{s}")
        if not wage > 0:
            reasons.append(f"wage_{s} not positive")
        if hours < MIN_HOURS:
            reasons.append("hours below 10" if s == "m" else "hours_f below 10")
        elif hours > T:
            reasons.append(f"hours_{s} above {T:g}")
        if not AGE_RANGE[0] <= age <= AGE_RANGE[1]:
            reasons.append(f"age_{s} outside 25-65")
        if getattr(obs, f"cons_private_{s}") < 0:
            reasons.append(f"cons_private_{s} negative")
        if getattr(obs, f"educ_{s}") not in EDUCATION_LEVELS:
            reasons.append(f"educ_{s} not in {EDUCATION_LEVELS}")
        scores = getattr(obs, f"trait_scores_{s}")
        for trait, value in scores.items():
            if value is None:
                continue
            lo, hi = TRAIT_BOUNDS[trait]
            if not lo <= value <= hi:
                reasons.append(f"{trait}_{s} outside [{lo:g}, {hi:g}]")
    if obs.cons_public < 0:
        reasons.append("cons_public negative")
    if obs.n_children < 0:
        reasons.append("n_children negative")
    if (obs.wage_m + obs.wage_f) * T + obs.nonlabor_income <= 0:
        reasons.append("nonpositive full income")
    return reasons


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _num(raw: str) -> float:
    return float(raw)


def _opt_num(raw: str) -> float | None:
    raw = raw.strip()
    return None if raw == "" else float(raw)


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "married"):
        return True
    if value in ("0", "false", "no", "cohabiting"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _educ(raw: str) -> str:
    value = raw.strip().lower()
    if value in ("0", "1", "2"):
        return EDUCATION_LEVELS[int(value)]
    return value


def load_panel(
    source: Source, schema: Mapping[str, str] | None = None
) -> tuple[list[HouseholdObservation], list[Rejection]]:
    """Parse a couple-wave CSV into observations.

    Parameters
    ----------
    source
        Path, raw bytes or open file holding UTF-8 CSV with a header row.
    schema
        Map from canonical field name to the CSV header used in `source`.
        Fields absent from the map use their canonical name.

    Returns
    -------
    observations, rejects
        Rows violating :class:`HouseholdObservation` invariants land in
        `rejects` with reasons; parsing errors in a required column are fatal.
    """
    colmap = default_schema()
    if schema:
        unknown = set(schema) - set(CANONICAL_COLUMNS)
        if unknown:
            raise PanelError(f"schema maps unknown fields: {sorted(unknown)}")
        colmap.update(schema)

    text = _read_text(source)
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise PanelError("empty input: no header row")
    header = set(reader.fieldnames)
    missing = [f for f in SCALAR_FIELDS if colmap[f] not in header]
    if missing:
        raise PanelError(f"required columns missing: {missing}")

    observations: list[HouseholdObservation] = []
    rejects: list[Rejection] = []
    for lineno, row in enumerate(reader, start=2):
        if None in row:
            raise PanelError(f"line {lineno}: more fields than header columns")

        def get(name: str) -> str:
            value = row.get(colmap[name])
            if value is None:
                raise PanelError(f"line {lineno}: missing field {colmap[name]}")
            return value

        try:
            traits = {
                s: {
                    t: _opt_num(row.get(colmap[f"{t}_{s}"]) or "")
                    for t in TRAITS
                    if colmap[f"{t}_{s}"] in header
                }
                for s in ("m", "f")
            }
            hh_private = (
                _opt_num(get("cons_private_household"))
                if colmap["cons_private_household"] in header
                else None
            )
            obs = HouseholdObservation(
                household_id=get("household_id").strip(),
                wave=int(float(get("wave"))),
                wage_m=_num(get("wage_m")),
                wage_f=_num(get("wage_f")),
                hours_m=_num(get("hours_m")),
                hours_f=_num(get("hours_f")),
                nonlabor_income=_num(get("nonlabor_income")),
                cons_private_m=_num(get("cons_private_m")),
                cons_private_f=_num(get("cons_private_f")),
                cons_public=_num(get("cons_public")),
                age_m=_num(get("age_m")),
                age_f=_num(get("age_f")),
                educ_m=_educ(get("educ_m")),
                educ_f=_educ(get("educ_f")),
                n_children=int(float(get("n_children"))),
                married=_bool(get("married")),
                trait_scores_m=traits["m"],
                trait_scores_f=traits["f"],
                cons_private_household=hh_private,
            )
        except ValueError as exc:
            raise PanelError(f"line {lineno}: {exc}") from exc
        reasons = validate(obs)
        if reasons:
            rejects.append(
                Rejection(lineno, obs.household_id, str(obs.wave), tuple(reasons))
            )
        else:
            observations.append(obs)
    return observations, rejects


def write_rejects(rejects: Sequence[Rejection], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["line", "household_id", "wave", "reason"])
        for r in rejects:
            writer.writerow([r.line, r.household_id, r.wave, "; ".join(r.reasons)])


def full_income(wage_m, wage_f, nonlabor_income):
    return (np.asarray(wage_m) + np.asarray(wage_f)) * T + np.asarray(nonlabor_income)


def derive_vars(
    obs: HouseholdObservation, denominator: str = "full_income"
) -> DerivedVars:
    """Full income, leisure and the five budget shares of one couple-wave.

    `denominator` selects the share base: ``"full_income"`` (default) or
    ``"expenditure"`` (sum of the five modeled expenditures).
    """
    y = float(full_income(obs.wage_m, obs.wage_f, obs.nonlabor_income))
    if y <= 0:
        raise PanelError("nonpositive full income")
    leisure_m = T - obs.hours_m
    leisure_f = T - obs.hours_f
    spending = {
        "cm": obs.cons_private_m,
        "cf": obs.cons_private_f,
        "lm": obs.wage_m * leisure_m,
        "lf": obs.wage_f * leisure_f,
        "C": obs.cons_public,
    }
    base = _share_base(y, sum(spending.values()), denominator)
    shares = {good: spending[good] / base for good in GOODS}
    if denominator == "full_income":
        _check_residual(obs, y, spending)
    return DerivedVars(y, leisure_m, leisure_f, shares)


def _share_base(y, expenditure, denominator):
    if denominator == "full_income":
        return y
    if denominator == "expenditure":
        return expenditure
    raise PanelError(f"unknown share denominator {denominator!r}")


def _check_residual(obs, y, spending):
    # unassignable private consumption is not modeled; only warn when the
    # modeled goods overshoot the budget
    total = sum(spending.values())
    if obs.cons_private_household is not None:
        residual = obs.cons_private_household - obs.cons_private_m - obs.cons_private_f
        if residual < 0:
            logger.debug(
                "household %s wave %s: assignable private consumption exceeds "
                "household private consumption",
                obs.household_id,
                obs.wave,
            )
    elif total > y * (1 + 1e-12):
        logger.debug(
            "household %s wave %s: modeled expenditure %.2f exceeds full income %.2f",
            obs.household_id,
            obs.wave,
            total,
            y,
        )


def pool_waves(
    panels: Mapping[int, Iterable[HouseholdObservation]],
) -> list[HouseholdObservation]:
    """Concatenate per-wave lists into one pooled cross-section.

    Each observation is re-tagged with the wave key it was filed under.
    """
    if not panels:
        raise PanelError("at least one wave is required")
    pooled = []
    seen = set()
    for wave in sorted(panels):
        for obs in panels[wave]:
            key = (obs.household_id, int(wave))
            if key in seen:
                raise PanelError(f"duplicate (household_id, wave) {key}")
            seen.add(key)
            pooled.append(obs if obs.wave == wave else replace(obs, wave=int(wave)))
    return pooled


def wave_dummies(waves: Sequence[int] | np.ndarray, base: int | None = None) -> pd.DataFrame:
    """Indicator columns ``wave_<year>`` for every wave but the base (earliest)."""
    waves = np.asarray(waves).astype(int)
    levels = sorted(set(waves.tolist()))
    if base is None:
        base = levels[0]
    cols = {
        f"wave_{w}": (waves == w).astype(float) for w in levels if w != base
    }
    return pd.DataFrame(cols, index=range(len(waves)))


def to_frame(
    observations: Sequence[HouseholdObservation], denominator: str = "full_income"
) -> pd.DataFrame:
    """Sample frame: canonical columns plus ``y``, ``leisure_*`` and ``share_*``.

    Missing trait scores become NaN. Row order follows `observations`.
    """
    records = []
    for obs in observations:
        derived = derive_vars(obs, denominator)
        rec = {name: getattr(obs, name) for name in SCALAR_FIELDS}
        rec["cons_private_household"] = (
            math.nan if obs.cons_private_household is None else obs.cons_private_household
        )
        for s in ("m", "f"):
            scores = getattr(obs, f"trait_scores_{s}")
            for t in TRAITS:
                v = scores.get(t)
                rec[f"{t}_{s}"] = math.nan if v is None else float(v)
        rec["y"] = derived.full_income
        rec["leisure_m"] = derived.leisure_m
        rec["leisure_f"] = derived.leisure_f
        for good in GOODS:
            rec[f"share_{good}"] = derived.shares[good]
        records.append(rec)
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        raise PanelError("no observations")
    frame["household_id"] = frame["household_id"].astype(str)
    frame["wave"] = frame["wave"].astype(int)
    if denominator == "full_income":
        over = int((frame[[f"share_{g}" for g in GOODS]].sum(axis=1) > 1 + 1e-12).sum())
        if over:
            logger.warning("%d of %d rows: modeled expenditure exceeds full income", over, len(frame))
    return frame


def add_derived(frame: pd.DataFrame, denominator: str = "full_income") -> pd.DataFrame:
    """Vectorized :func:`derive_vars` on a frame that holds canonical columns."""
    out = frame.copy()
    y = full_income(out["wage_m"], out["wage_f"], out["nonlabor_income"])
    if np.any(y <= 0):
        raise PanelError("nonpositive full income")
    out["y"] = y
    out["leisure_m"] = T - out["hours_m"]
    out["leisure_f"] = T - out["hours_f"]
    spend = {
        "cm": out["cons_private_m"],
        "cf": out["cons_private_f"],
        "lm": out["wage_m"] * out["leisure_m"],
        "lf": out["wage_f"] * out["leisure_f"],
        "C": out["cons_public"],
    }
    base = _share_base(y, sum(spend.values()), denominator)
    for good in GOODS:
        out[f"share_{good}"] = spend[good] / base
    return out


def frame_to_observations(frame: pd.DataFrame) -> list[HouseholdObservation]:
    """Inverse of :func:`to_frame` (derived columns are dropped)."""
    out = []
    for row in frame.itertuples(index=False):
        r = row._asdict()
        traits = {
            s: {
                t: (None if pd.isna(r.get(f"{t}_{s}", math.nan)) else float(r[f"{t}_{s}"]))
                for t in TRAITS
            }
            for s in ("m", "f")
        }
        hh = r.get("cons_private_household", math.nan)
        out.append(
            HouseholdObservation(
                household_id=str(r["household_id"]),
                wave=int(r["wave"]),
                wage_m=float(r["wage_m"]),
                wage_f=float(r["wage_f"]),
                hours_m=float(r["hours_m"]),
                hours_f=float(r["hours_f"]),
                nonlabor_income=float(r["nonlabor_income"]),
                cons_private_m=float(r["cons_private_m"]),
                cons_private_f=float(r["cons_private_f"]),
                cons_public=float(r["cons_public"]),
                age_m=float(r["age_m"]),
                age_f=float(r["age_f"]),
                educ_m=str(r["educ_m"]),
                educ_f=str(r["educ_f"]),
                n_children=int(r["n_children"]),
                married=bool(r["married"]),
                trait_scores_m=traits["m"],
                trait_scores_f=traits["f"],
                cons_private_household=None if pd.isna(hh) else float(hh),
            )
        )
    return out


def write_panel_csv(frame: pd.DataFrame, path: str | Path | IO[str]) -> None:
    """Write the canonical columns of a sample frame as UTF-8 CSV.

    Missing values are written as empty fields; floats use ``repr`` precision so
    a read-back is lossless.
    """
    cols = [c for c in CANONICAL_COLUMNS if c in frame.columns]
    out = frame[cols].copy()
    out["married"] = out["married"].astype(int)
    out.to_csv(path, index=False, na_rep="", float_format="%.17g", lineterminator="\n")
