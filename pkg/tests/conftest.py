import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import CRITERIA  # noqa: E402
from hhcollective.demand import prepare  # noqa: E402
from hhcollective.simulate import SimScenario, generate  # noqa: E402


@pytest.fixture(scope="session")
def null_sim():
    return generate(SimScenario(noise_sd=0.02), 400, 11)


@pytest.fixture(scope="session")
def null_data(null_sim):
    return prepare(null_sim.frame, null_sim.factors)


@pytest.fixture(scope="session")
def panel_csv(tmp_path_factory, null_sim):
    path = tmp_path_factory.mktemp("panel") / "panel.csv"
    null_sim.write(path)
    return path



def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
