import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from finrescue.generators import four_node

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fn():
    """Four-node example with w = 0.45 everywhere."""
    return four_node(0.45)


@pytest.fixture
def fn1():
    return four_node(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
