import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spatialsurvey.epidemic import DEFAULT_PHASES, DiseaseParams, run_epidemic
from spatialsurvey.population import GridSpec, generate_population
from spatialsurvey.seeding import derive_seed

RHO_LEVELS = (0.3, 0.5, 0.7)
MASTER_SEED = 0


def default_run(rho: float, master_seed: int = MASTER_SEED):
    """Population and daily frames exactly as the CLI builds them from the default config."""
    grid = generate_population(GridSpec(20, 20, 1.0), rho, 20000, derive_seed(master_seed, "population", rho))
    snaps = run_epidemic(grid, DEFAULT_PHASES, DiseaseParams(), 10, derive_seed(master_seed, "epidemic", rho))
    return grid, snaps


@pytest.fixture(scope="session")
def default_runs():
    return {rho: default_run(rho) for rho in RHO_LEVELS}


@pytest.fixture(scope="session")
def default_frames(default_runs):
    return {rho: {f.day: f for f in snaps} for rho, (_, snaps) in default_runs.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
