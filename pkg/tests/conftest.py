import numpy as np
import pytest

from ridepool.roadnet import grid_network


@pytest.fixture(scope="session")
def grid3():
    return grid_network(3, 3, edge_seconds=60.0)


@pytest.fixture(scope="session")
def grid4():
    return grid_network(4, 4, edge_seconds=60.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
