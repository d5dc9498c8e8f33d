import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zsf import compute_Q, make_grid, solve_profile  # noqa: E402


@pytest.fixture(scope="session")
def grid():
    return make_grid(256, 40.0)


@pytest.fixture(scope="session")
def gs(grid):
    return compute_Q(grid)


@pytest.fixture(scope="session")
def Q(gs):
    return gs.Q


@pytest.fixture(scope="session")
def small_gs():
    return compute_Q(make_grid(128, 30.0))


@pytest.fixture(scope="session")
def profiles(Q):
    return {c: solve_profile(c, Q) for c in (0.025, 0.05, 0.1, 0.2)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
