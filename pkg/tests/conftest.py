import numpy as np
import pytest

from driftpf.grid import ModelGrid, PhysParams
from driftpf.swe import SchemeParams


@pytest.fixture
def phys():
    return PhysParams()


@pytest.fixture
def scheme():
    return SchemeParams()


@pytest.fixture
def small_grid():
    return ModelGrid(40, 20, 2220.0, 2220.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        name, status, detail = RESULTS[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d} {name}: {detail}")
