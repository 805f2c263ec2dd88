import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from almpc.environment import scenario

settings.register_profile("almpc", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("almpc")


@pytest.fixture(scope="session")
def numerical():
    return scenario("numerical")


@pytest.fixture(scope="session")
def ex1(numerical):
    return numerical.loop


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion -> one-line verdict, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
