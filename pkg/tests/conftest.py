import numpy as np
import pytest

from repflow.nets import Model, ModelDims, init_params

SMALL = ModelDims(d_x=3, d_y=1, d_z=4, hidden=8, time_dim=6)


@pytest.fixture
def small_model():
    return Model(SMALL, init_params(SMALL, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: s[6:8]):
            terminalreporter.write_line(line)
