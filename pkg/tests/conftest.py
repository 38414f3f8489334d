import pytest

# PASS/FAIL lines collected by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

from quasiwave.model import BoundaryTensionProfile, Grid, cosine_profiles, make_softplus_tension, mollify_initial_data


@pytest.fixture(scope="session")
def softplus():
    return make_softplus_tension(1.0, 2.0)


@pytest.fixture(scope="session")
def ramp(softplus):
    """Applied tension from 0 to tau(1) over [0, 1]."""
    return BoundaryTensionProfile(0.0, float(softplus.tau(1.0)), 1.0)


@pytest.fixture(scope="session")
def ramp_init(softplus, ramp):
    g = Grid(100)
    r0, p0 = cosine_profiles(g, softplus, ramp, 0.5, 0.25)
    return mollify_initial_data(r0, p0, softplus, ramp, grid=g)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
