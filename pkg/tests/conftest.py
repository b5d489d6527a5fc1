import math
import warnings

import numpy as np
import pytest

from lsred.ansatz import PeakSetup
from lsred.coefficients import CoefficientField
from lsred.grid import PeriodicGrid, ResolutionWarning
from lsred.groundstate import solve_ground_state
from lsred.manifold import build_flat_torus

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def profile_1d4():
    return solve_ground_state(1, 4.0)


@pytest.fixture(scope="session")
def profile_2d4():
    return solve_ground_state(2, 4.0)


@pytest.fixture(scope="session")
def torus():
    return build_flat_torus([TWO_PI, TWO_PI])


@pytest.fixture(scope="session")
def cosine_coeffs():
    return CoefficientField.from_expressions(2, a="1 + 0.5*cos(x1)")


@pytest.fixture(scope="session")
def make_torus_setup(profile_2d4, torus):
    """Cached PeakSetup factory on the 2-torus, keyed by (eps, coefficient recipe a)."""
    cache = {}

    def make(eps, a="1", nodes_per_eps=4):
        key = (eps, a, nodes_per_eps)
        if key not in cache:
            coeffs = CoefficientField.from_expressions(2, a=a)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ResolutionWarning)
                grid = PeriodicGrid.for_epsilon(torus, eps, nodes_per_eps)
                setup = PeakSetup(profile_2d4, grid, coeffs, eps)
                _ = setup.op
            cache[key] = setup
        return cache[key]

    return make


def fd_laplacian_cartesian(fn, z, h):
    """Fourth-order five-point-per-axis Laplacian of fn at z in flat coordinates."""
    z = np.asarray(z, dtype=float)
    total = 0.0
    for e in np.eye(z.size):
        total += (-fn(z + 2 * h * e) + 16 * fn(z + h * e) - 30 * fn(z)
                  + 16 * fn(z - h * e) - fn(z - 2 * h * e)) / (12 * h * h)
    return total


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_record(request):
    """record(k, passed, detail): store a criterion outcome for the terminal summary and echo it."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(k, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {k}: {detail}"
        lines.append((k, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
