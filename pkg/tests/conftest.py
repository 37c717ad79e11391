import numpy as np
import pytest

from tdlastomo.geometry import PixelGrid, SensorGeometry, sensitivity_for
from tdlastomo.solvers.pipeline import Operators
from tdlastomo.solvers.regularization import build_difference_operator
from tdlastomo.spectroscopy import load_transition_pair


@pytest.fixture(scope="session")
def geom():
    return SensorGeometry()


@pytest.fixture(scope="session")
def grid(geom):
    return PixelGrid.from_geometry(geom)


@pytest.fixture(scope="session")
def L(geom, grid):
    return sensitivity_for(geom, grid)


@pytest.fixture(scope="session")
def F(grid):
    return build_difference_operator(grid)


@pytest.fixture(scope="session")
def pair():
    return load_transition_pair()


@pytest.fixture(scope="session")
def ops(geom, grid, L):
    return Operators(geom, grid, L)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def verdicts(request):
    """Criterion key -> one-line PASS/FAIL summary, echoed after the run."""
    return request.config.stash.setdefault(VERDICTS, {})


def _verdict_order(key):
    # analysis lines follow their criterion
    base = key.removesuffix(" analysis")
    return int(base.split()[0]), base, key != base


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines, key=_verdict_order):
            terminalreporter.write_line(lines[key])
