import numpy as np
import pytest

from src.ofdm import OfdmConfig


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run desk-scale slow tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ofdm():
    return OfdmConfig()


@pytest.fixture
def small_ofdm():
    """Default subcarrier grid with few symbols per capture."""

    return OfdmConfig(n_symbols=64)
