"""End-to-end runs: load or simulate a sample, build factors, test, write reports.

Every writer here is deterministic: fixed float formats, sorted JSON keys, no
timestamps. Two runs with the same configuration produce identical bytes.
"""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import __version__
from .collective import (
    ExclusionTest,
    ProportionalityTest,
    check_monotonicity,
    run_tests,
)
from .demand import DemandConfig, prepare
from .inequality import analyze
from .panel import AGE_RANGE, EDUCATION_LEVELS, GOODS, TRAITS, load_panel, to_frame, write_panel_csv, write_rejects
from .psychometrics import FactorSet, build_factors, impute_frame
from .simulate import SimScenario, generate

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved settings of one CLI run; round-trips through JSON."""

    input: str | None = None
    schema: str | None = None
    scenario: dict | None = None
    n: int = 1000
    seed: int | None = None
    B: int | None = None
    imputation: str = "mean"
    conditioning_good: str = "cm"
    anchor: str = "cm"
    inverted_factor: int = 2
    spouse_controls: str = "husband"
    denominator: str = "full_income"
    small_sample: bool = False
    output_dir: str = "out"
    formats: list[str] = field(default_factory=lambda: ["json", "text"])

    def __post_init__(self):
        if self.imputation not in ("mean", "median"):
            raise ConfigError("imputation must be 'mean' or 'median'")
        if self.denominator not in ("full_income", "expenditure"):
            raise ConfigError("denominator must be 'full_income' or 'expenditure'")
        bad = set(self.formats) - {"json", "text"}
        if bad or not self.formats:
            raise ConfigError(f"formats must be a nonempty subset of json, text (got {self.formats})")
        if self.B is not None and self.B < 99:
            raise ConfigError("B must be at least 99")
        if self.anchor not in GOODS:
            raise ConfigError(f"anchor must be one of {GOODS}")
        if self.n < 8:
            raise ConfigError("n must be at least 8")
        try:
            self.demand_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.scenario is not None:
            try:
                SimScenario.from_dict(self.scenario)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"scenario: {exc}") from exc

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def demand_config(self) -> DemandConfig:
        return DemandConfig(
            spouse_controls=self.spouse_controls,
            conditioning_good=self.conditioning_good,
            inverted_factor=self.inverted_factor,
            small_sample=self.small_sample,
        )

    def sim_scenario(self) -> SimScenario:
        return SimScenario.from_dict(self.scenario or {})

    def require_bootstrap(self) -> None:
        if self.seed is None or self.B is None:
            raise ConfigError("seed and B are required for bootstrap-bearing commands")


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        desc = out.stdout.strip()
        if desc:
            return f"{__version__}+g{desc}" if not desc.startswith("v") else desc
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# --- writers --------------------------------------------------------------


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def write_csv(path: Path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


class Bundle:
    """Output directory plus provenance embedded in every JSON report."""

    def __init__(self, config: RunConfig, command: str):
        self.dir = Path(config.output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.provenance = {
            "command": command,
            "version": version_string(),
            "config": config.to_dict(),
        }
        self.files: list[str] = []

    def _track(self, path: Path) -> Path:
        self.files.append(path.name)
        return path

    def json(self, name: str, payload: dict) -> None:
        if "json" in self.config.formats:
            write_json(self._track(self.dir / f"{name}.json"), {**payload, "provenance": self.provenance})

    def text(self, name: str, text: str) -> None:
        if "text" in self.config.formats:
            write_text(self._track(self.dir / f"{name}.txt"), text)

    def csv(self, name: str, frame: pd.DataFrame) -> None:
        write_csv(self._track(self.dir / f"{name}.csv"), frame)

    def path(self, name: str) -> Path:
        return self._track(self.dir / name)

    def manifest(self) -> None:
        write_json(self.dir / "manifest.json", {"files": sorted(self.files), **self.provenance})


# --- steps ----------------------------------------------------------------


def load_sample(config: RunConfig, bundle: Bundle | None = None) -> tuple[pd.DataFrame, list]:
    """Read (or simulate) the sample; returns the frame with derived variables and the rejects."""
    if config.input is None:
        if config.scenario is None:
            raise ConfigError("either input or scenario is required")
        if config.seed is None:
            raise ConfigError("a simulated sample needs a seed")
        sim = generate(config.sim_scenario(), config.n, config.seed)
        if bundle is not None:
            write_panel_csv(sim.frame, bundle.path("panel.csv"))
            write_csv(bundle.path("truth.csv"), sim.truth)
        return sim.frame, []
    schema = None
    if config.schema is not None:
        try:
            schema = json.loads(Path(config.schema).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read schema {config.schema}: {exc}") from exc
    observations, rejects = load_panel(Path(config.input), schema)
    return to_frame(observations, config.denominator), rejects


def prepare_factors(frame: pd.DataFrame, config: RunConfig) -> tuple[pd.DataFrame, FactorSet, list[str]]:
    frame, dropped = impute_frame(frame, config.imputation)
    return frame, build_factors(frame), dropped


SUMMARY_PANELS = {
    "A. Economic variables": (
        "wage_m", "wage_f", "hours_m", "hours_f", "leisure_m", "leisure_f", "nonlabor_income",
        "y", "cons_private_m", "cons_private_f", "cons_public", "cons_private_household",
    ),
    "B. Demographic variables": ("age_m", "age_f", "n_children", "married"),
    "C. Personality traits": tuple(f"{t}_{s}" for t in TRAITS for s in ("m", "f")),
}


def sample_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean, sd, min and max per variable, grouped in three panels; sd is blank for one row."""
    frame = frame.copy()
    for s in ("m", "f"):
        for e in EDUCATION_LEVELS:
            frame[f"educ_{e}_{s}"] = (frame[f"educ_{s}"] == e).astype(float)
    frame["married"] = frame["married"].astype(float)
    panels = dict(SUMMARY_PANELS)
    panels["B. Demographic variables"] = panels["B. Demographic variables"] + tuple(
        f"educ_{e}_{s}" for s in ("m", "f") for e in EDUCATION_LEVELS
    )
    rows = []
    for panel, cols in panels.items():
        for c in cols:
            v = pd.to_numeric(frame[c], errors="coerce").dropna().to_numpy(dtype=float)
            rows.append(
                {
                    "panel": panel,
                    "variable": c,
                    "n": v.size,
                    "mean": v.mean() if v.size else np.nan,
                    "sd": v.std(ddof=1) if v.size > 1 else np.nan,
                    "min": v.min() if v.size else np.nan,
                    "max": v.max() if v.size else np.nan,
                }
            )
    return pd.DataFrame(rows)


def stability_table(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean trait score by sex and age within the 25-65 window."""
    lo, hi = AGE_RANGE
    rows = []
    for s, sex in (("m", "male"), ("f", "female")):
        age = frame[f"age_{s}"].astype(float)
        keep = (age >= lo) & (age <= hi)
        for t in TRAITS:
            sub = pd.DataFrame({"age": age[keep].astype(int), "score": frame.loc[keep, f"{t}_{s}"]})
            sub = sub.dropna()
            for a, g in sub.groupby("age", sort=True):
                rows.append({"sex": sex, "trait": t, "age": int(a), "mean_score": g["score"].mean(), "n": len(g)})
    return pd.DataFrame(rows, columns=["sex", "trait", "age", "mean_score", "n"])


def _dist_frame(test: ProportionalityTest | ExclusionTest) -> pd.DataFrame:
    d = test.wald.bootstrap_distribution
    return pd.DataFrame({"replication": np.arange(len(d)), "statistic": d})


def write_prop(bundle: Bundle, test: ProportionalityTest) -> None:
    bundle.json("proportionality", test.to_dict())
    bundle.text("proportionality", test.table())
    if test.wald.bootstrap_distribution is not None:
        bundle.csv("bootstrap_proportionality", _dist_frame(test))


def write_excl(bundle: Bundle, test: ExclusionTest) -> None:
    bundle.json("exclusion", test.to_dict())
    bundle.text("exclusion", test.table())
    if test.wald.bootstrap_distribution is not None:
        bundle.csv("bootstrap_exclusion", _dist_frame(test))


def write_pca(bundle: Bundle, factors: FactorSet) -> None:
    factors.pca.save(bundle.path("pca.json"))
    bundle.text("pca", factors.pca.report())
    bundle.csv("factors", factors.to_frame())


def estimates_payload(data) -> dict:
    unc, cond = data.both()
    return {
        "unconditional": unc.fit.to_dict(),
        "conditional": cond.fit.to_dict(),
        "income_first_stage": {
            "f_stat": unc.income_stage.f_stat.tolist(),
            "df": list(unc.income_stage.f_df),
        },
        "conditioning_first_stage": {
            "f_stat": cond.good_stage.f_stat.tolist(),
            "df": list(cond.good_stage.f_df),
        },
        "warnings": cond.warnings,
    }


def run_pipeline(config: RunConfig, n_workers: int = 1) -> Bundle:
    """Factors, both systems, both tests, monotonicity and inequality in one bundle."""
    config.require_bootstrap()
    bundle = Bundle(config, "pipeline")
    frame, rejects = load_sample(config, bundle)
    write_rejects(rejects, bundle.path("rejects.csv"))
    bundle.csv("summary", sample_summary(frame))
    frame, factors, dropped = prepare_factors(frame, config)
    write_pca(bundle, factors)
    data = prepare(frame, factors, config.demand_config())
    bundle.json("estimates", {**estimates_payload(data), "dropped_households": dropped})

    prop, excl = run_tests(data, B=config.B, seed=config.seed, anchor=config.anchor, n_workers=n_workers)
    write_prop(bundle, prop)
    write_excl(bundle, excl)

    mono = check_monotonicity(frame, factors, config.demand_config())
    bundle.json("monotonicity", mono.to_dict())
    bundle.text("monotonicity", mono.table())

    ineq = analyze(frame, config.B, config.seed + 2)
    bundle.json("inequality", ineq.to_dict())
    bundle.text("inequality", ineq.table())
    riceb = ineq.summary.T.reset_index().rename(columns={"index": "variable"})
    bundle.csv("riceb_summary", riceb)
    kde_dir = bundle.dir / "kde"
    for p in ineq.write_densities(kde_dir):
        bundle.files.append(f"kde/{p.name}")
    bundle.csv("stability", stability_table(frame))
    bundle.manifest()
    return bundle
