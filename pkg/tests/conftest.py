import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tiltlab.ensemble import make_config

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ballot_config():
    """One floored lazy bridge from 1 to 1 in four steps, no tilt."""
    return make_config(1, (0, 4), 4.0, 0.0, 1.0, [1], [1], floor=0.0)


@pytest.fixture
def two_curve_config():
    return make_config(2, (0, 6), 10.0, 1.0, 2.0, [3, 1], [3, 1], floor=0.0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
