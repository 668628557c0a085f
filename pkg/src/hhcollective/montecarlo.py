"""Monte Carlo size and power of the collective tests on simulated couples."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .collective import run_tests
from .demand import prepare
from .simulate import SimScenario, generate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunOutcome:
    seed: int
    p_proportionality: float
    p_exclusion: float
    first_stage_f: float


@dataclass
class RejectionRates:
    scenario: SimScenario
    n: int
    B: int | None
    level: float
    outcomes: list[RunOutcome]

    @property
    def proportionality(self) -> float:
        return float(np.mean([o.p_proportionality < self.level for o in self.outcomes]))

    @property
    def exclusion(self) -> float:
        return float(np.mean([o.p_exclusion < self.level for o in self.outcomes]))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "B": self.B,
            "level": self.level,
            "runs": len(self.outcomes),
            "proportionality": self.proportionality,
            "exclusion": self.exclusion,
            "median_first_stage_f": float(np.median([o.first_stage_f for o in self.outcomes])),
            "scenario": self.scenario.to_dict(),
        }


def one_run(scenario: SimScenario, n: int, seed: int, B: int | None) -> RunOutcome:
    sim = generate(scenario, n, seed)
    data = prepare(sim.frame, sim.factors)
    prop, excl = run_tests(data, B=B, seed=seed)
    return RunOutcome(seed, prop.p_value, excl.p_value, excl.first_stage_f)


def _one(args):
    return one_run(*args)


def rejection_rates(
    scenario: SimScenario,
    n: int = 1000,
    runs: int = 300,
    B: int | None = 499,
    level: float = 0.05,
    first_seed: int = 0,
    n_workers: int = 1,
) -> RejectionRates:
    """Share of simulated datasets in which each test rejects at `level`.

    Dataset ``r`` is generated with seed ``first_seed + r`` and bootstrapped
    with the same seed, so results do not depend on `n_workers`.
    """
    jobs = [(scenario, n, first_seed + r, B) for r in range(runs)]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(_one, jobs, chunksize=max(1, runs // (4 * n_workers))))
    else:
        outcomes = [_one(j) for j in jobs]
    return RejectionRates(scenario, n, B, level, outcomes)
