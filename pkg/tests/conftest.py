import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from levylab import build_model

settings.register_profile("levylab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("levylab")

ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def jump_ou_raw():
    return build_model("ou_jump", {"theta": 1.0}, {"atoms": [{"mark": 1.0, "weight": 1.0}]}, "raw")


@pytest.fixture
def jump_ou_ito():
    return build_model("ou_jump", {"theta": 1.0}, {"atoms": [{"mark": 1.0, "weight": 1.0}]}, "ito")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
