import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from causal_bench.synthgen import DGPConfig, generate_dataset

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_ds():
    return generate_dataset(DGPConfig(n=2000, seed=3))


@pytest.fixture(scope="session")
def default_ds():
    return generate_dataset(DGPConfig(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one status line per acceptance criterion, printed at the end of the run
CRITERIA: dict = {}


@pytest.fixture(scope="session")
def criteria():
    return CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[key])
