"""Command-line entry point.

    hhcollective pipeline --config run.json --seed 7 --B 499 --output-dir out/

Settings come from an optional JSON config, and any flag given on the command
line overrides the matching key. Exit codes: 0 success, 2 input error,
3 numerical failure, 4 config error. A rejected null hypothesis is a result,
not an error, and still exits 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .collective import check_monotonicity, test_exclusion, test_proportionality
from .demand import DemandError, prepare
from .estimation import EstimationError
from .inequality import InequalityError, analyze
from .panel import GOODS, PanelError, write_panel_csv, write_rejects
from .pipeline import (
    Bundle,
    ConfigError,
    RunConfig,
    estimates_payload,
    load_sample,
    prepare_factors,
    run_pipeline,
    sample_summary,
    stability_table,
    write_csv,
    write_excl,
    write_pca,
    write_prop,
)
from .psychometrics import PsychometricsError
from .simulate import SimulationError, generate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4

NUMERICAL_ERRORS = (
    EstimationError,
    DemandError,
    PsychometricsError,
    InequalityError,
    SimulationError,
    np.linalg.LinAlgError,
    FloatingPointError,
)

log = logging.getLogger("hhcollective")


class _Parser(argparse.ArgumentParser):
    """Usage errors are config errors here, so they exit 4 rather than 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"error [cli]: {message}\n")


def _scenario(value: str) -> dict:
    text = value if value.lstrip().startswith("{") else None
    if text is None:
        try:
            text = Path(value).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {value}: {exc}") from exc
    try:
        out = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(out, dict):
        raise ConfigError("scenario must be a JSON object")
    return out


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON run config; flags override its keys")
    p.add_argument("--threads", type=int, default=S, help="worker cap for bootstraps (results do not change)")
    p.add_argument("-v", "--verbose", action="count", default=S)
    p.add_argument("--input", default=S, help="couple-wave CSV")
    p.add_argument("--schema", default=S, help="JSON map from field name to CSV header")
    p.add_argument("--scenario", default=S, help="simulation scenario: JSON file or inline object")
    p.add_argument("--n", type=int, default=S, help="simulated sample size")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--B", "-B", type=int, default=S, help="bootstrap replications")
    p.add_argument("--imputation", choices=("mean", "median"), default=S)
    p.add_argument("--conditioning-good", dest="conditioning_good", choices=GOODS, default=S)
    p.add_argument("--anchor", choices=GOODS, default=S, help="anchor good of the ratio restrictions")
    p.add_argument("--inverted-factor", dest="inverted_factor", type=int, choices=(1, 2), default=S)
    p.add_argument("--spouse-controls", dest="spouse_controls", choices=("husband", "wife"), default=S)
    p.add_argument("--denominator", choices=("full_income", "expenditure"), default=S)
    p.add_argument("--small-sample", dest="small_sample", action="store_true", default=S)
    p.add_argument("--output-dir", dest="output_dir", default=S)
    p.add_argument("--formats", default=S, help="comma list from json,text")
    return p


COMMANDS = {
    "ingest": "validate a panel and write summary statistics and a reject log",
    "simulate": "draw a sample from the collective household simulator",
    "pca": "fit the personality PCA and write the factors",
    "estimate": "estimate the unconditional and conditional demand systems",
    "test-prop": "proportionality test",
    "test-cond": "exclusion test on the conditional system",
    "inequality": "RICEB inequality by personality fraction groups",
    "stability": "mean trait score by age and sex",
    "pipeline": "every step above in one bundle",
}

RUN_KEYS = {
    "input", "schema", "scenario", "n", "seed", "B", "imputation", "conditioning_good", "anchor",
    "inverted_factor", "spouse_controls", "denominator", "small_sample", "output_dir", "formats",
}


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="hhcollective", description=__doc__.split("\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in COMMANDS.items():
        sub.add_parser(name, help=help_, parents=[common])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    for key in RUN_KEYS:
        if hasattr(args, key):
            val = getattr(args, key)
            if key == "scenario":
                val = _scenario(val)
            elif key == "formats":
                val = [f.strip() for f in val.split(",") if f.strip()]
            base[key] = val
    return RunConfig.from_dict(base)


def _analysis_inputs(config: RunConfig):
    frame, _ = load_sample(config)
    frame, factors, dropped = prepare_factors(frame, config)
    return frame, factors, dropped


def cmd_ingest(config: RunConfig, threads: int) -> Bundle:
    if config.input is None:
        raise ConfigError("ingest needs --input")
    bundle = Bundle(config, "ingest")
    frame, rejects = load_sample(config)
    write_rejects(rejects, bundle.path("rejects.csv"))
    bundle.csv("summary", sample_summary(frame))
    bundle.manifest()
    log.info("%d rows accepted, %d rejected", len(frame), len(rejects))
    return bundle


def cmd_simulate(config: RunConfig, threads: int) -> Bundle:
    if config.seed is None:
        raise ConfigError("simulate needs --seed")
    bundle = Bundle(config, "simulate")
    sim = generate(config.sim_scenario(), config.n, config.seed)
    write_panel_csv(sim.frame, bundle.path("panel.csv"))
    write_csv(bundle.path("truth.csv"), sim.truth)
    bundle.json("simulation", {"scenario": sim.scenario.to_dict(), "meta": sim.meta,
                               "rejections": sim.rejections, "noise_redraws": sim.noise_redraws})
    bundle.manifest()
    return bundle


def cmd_pca(config: RunConfig, threads: int) -> Bundle:
    bundle = Bundle(config, "pca")
    _, factors, _ = _analysis_inputs(config)
    write_pca(bundle, factors)
    bundle.manifest()
    print(factors.pca.report())
    return bundle


def cmd_estimate(config: RunConfig, threads: int) -> Bundle:
    bundle = Bundle(config, "estimate")
    frame, factors, dropped = _analysis_inputs(config)
    data = prepare(frame, factors, config.demand_config())
    bundle.json("estimates", {**estimates_payload(data), "dropped_households": dropped})
    mono = check_monotonicity(frame, factors, config.demand_config())
    bundle.json("monotonicity", mono.to_dict())
    bundle.text("monotonicity", mono.table())
    bundle.manifest()
    return bundle


def cmd_test_prop(config: RunConfig, threads: int) -> Bundle:
    config.require_bootstrap()
    bundle = Bundle(config, "test-prop")
    frame, factors, _ = _analysis_inputs(config)
    data = prepare(frame, factors, config.demand_config())
    test = test_proportionality(data, B=config.B, seed=config.seed, anchor=config.anchor, n_workers=threads)
    write_prop(bundle, test)
    bundle.manifest()
    print(test.table())
    return bundle


def cmd_test_cond(config: RunConfig, threads: int) -> Bundle:
    config.require_bootstrap()
    bundle = Bundle(config, "test-cond")
    frame, factors, _ = _analysis_inputs(config)
    data = prepare(frame, factors, config.demand_config())
    test = test_exclusion(data, B=config.B, seed=config.seed, n_workers=threads)
    write_excl(bundle, test)
    bundle.manifest()
    print(test.table())
    return bundle


def cmd_inequality(config: RunConfig, threads: int) -> Bundle:
    config.require_bootstrap()
    bundle = Bundle(config, "inequality")
    frame, _, _ = _analysis_inputs(config)
    report = analyze(frame, config.B, config.seed)
    bundle.json("inequality", report.to_dict())
    bundle.text("inequality", report.table())
    for p in report.write_densities(bundle.dir / "kde"):
        bundle.files.append(f"kde/{p.name}")
    bundle.manifest()
    print(report.table())
    return bundle


def cmd_stability(config: RunConfig, threads: int) -> Bundle:
    bundle = Bundle(config, "stability")
    frame, _ = load_sample(config)
    bundle.csv("stability", stability_table(frame))
    bundle.manifest()
    return bundle


def cmd_pipeline(config: RunConfig, threads: int) -> Bundle:
    return run_pipeline(config, n_workers=threads)


HANDLERS = {
    "ingest": cmd_ingest,
    "simulate": cmd_simulate,
    "pca": cmd_pca,
    "estimate": cmd_estimate,
    "test-prop": cmd_test_prop,
    "test-cond": cmd_test_cond,
    "inequality": cmd_inequality,
    "stability": cmd_stability,
    "pipeline": cmd_pipeline,
}


def _tag(exc: BaseException) -> str:
    mod = type(exc).__module__
    return mod.rsplit(".", 1)[-1] if mod.startswith("hhcollective") else "numerics"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbosity = getattr(args, "verbose", 0) or 0
    logging.basicConfig(
        level=logging.WARNING - 10 * min(verbosity, 2),
        format="%(levelname)s [%(name)s] %(message)s",
    )
    threads = getattr(args, "threads", 1)
    try:
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        config = resolve_config(args)
        bundle = HANDLERS[args.command](config, threads)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PanelError as exc:
        print(f"error [panel]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NUMERICAL_ERRORS as exc:
        print(f"error [{_tag(exc)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("wrote %s", bundle.dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
