import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spinshelve import default_config

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def rates(config):
    return config.rates


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
