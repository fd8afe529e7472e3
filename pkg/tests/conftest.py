import numpy as np
import pytest
from hypothesis import settings

from finite_mfg.model import ModelSpec

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")

SYM = ModelSpec()
ASYM = ModelSpec(g=(0.0, 0.3))
D3 = ModelSpec(d=3, g=(0.0, 0.2, 0.4))
FREE = ModelSpec(beta=0.0)

ACCEPTANCE_LINES = {}


@pytest.fixture
def sym():
    return SYM


@pytest.fixture
def asym():
    return ASYM


@pytest.fixture
def d3():
    return D3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
