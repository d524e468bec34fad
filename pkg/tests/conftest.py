"""Shared fixtures: small grids so the unit suite stays fast.

Kernel matrices are cached on disk (``BOLTZMANN_BVP_CACHE`` or
``~/.cache/boltzmann_bvp``), so only the first run pays for assembly.
"""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from boltzmann_bvp.discretization import build_spatial_grid, build_velocity_grid
from boltzmann_bvp.geometry import ConvexDomain
from boltzmann_bvp.operators import build_operators
from boltzmann_bvp.params import PhysParams

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ball():
    return ConvexDomain.ball()


@pytest.fixture(scope="session")
def params0():
    return PhysParams(B0=0.1, gamma=0.0)


@pytest.fixture(scope="session")
def vgrid0(params0):
    return build_velocity_grid(params0, 16, 6)


@pytest.fixture(scope="session")
def sgrid_small(ball):
    return build_spatial_grid(ball, 4, 4)


@pytest.fixture(scope="session")
def ops0(params0, sgrid_small, vgrid0):
    return build_operators(params0, sgrid_small, vgrid0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record and print one acceptance line; the caller asserts on ``ok``."""
    def record(n: int, ok: bool, msg: str) -> bool:
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {msg}"
        CRITERIA[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
