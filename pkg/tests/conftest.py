import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from optarb.data_io import SyntheticMarketConfig, generate_synthetic_market

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_default_dtype(torch.float64)
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def af_chain():
    return generate_synthetic_market(SyntheticMarketConfig(n_dates=80, arb_noise_scale=0.0, seed=3))


@pytest.fixture(scope="session")
def arb_chain():
    return generate_synthetic_market(SyntheticMarketConfig(n_dates=80, arb_noise_scale=0.002, seed=4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from _acceptance import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
