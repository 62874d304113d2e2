import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from neumann_mcf.evolve import SolverConfig, run
from neumann_mcf.grid import GridSpec
from neumann_mcf.initial_data import DiskSet, build_g

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

RHO = 0.25
T_QUARTER = RHO * RHO / 4

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(1.0, 1.0, 64, 65)


@pytest.fixture(scope="session")
def grid128():
    return GridSpec(1.0, 1.0, 128, 129)


@pytest.fixture(scope="session")
def semicircle128(grid128):
    return build_g(DiskSet((0.5, 0.0), RHO), grid128)


@pytest.fixture(scope="session")
def traj128(semicircle128):
    """Semicircle run at 128 x 129, eps = 1e-3, to t = rho^2/4 with 64 snapshots."""
    return run(semicircle128.field, SolverConfig(1e-3, T_QUARTER, T_QUARTER / 64))


@pytest.fixture(scope="session")
def traj64(grid64):
    """Same run as ``traj128`` on the 64 x 65 grid."""
    return run(build_g(DiskSet((0.5, 0.0), RHO), grid64).field, SolverConfig(1e-3, T_QUARTER, T_QUARTER / 64))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20261014)
