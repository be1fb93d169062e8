import numpy as np
import pytest

from dkbo import harness
from dkbo.net import TrainConfig, init_net, train


@pytest.fixture(scope="session")
def offline_dataset():
    """The 1200-pose P0+P1 offline dataset (600 LHS poses per phantom)."""
    return harness.collect_dataset(("P0", "P1"), 600, seed=0)


@pytest.fixture(scope="session")
def trained(offline_dataset):
    net, curve = train(init_net(0), offline_dataset, TrainConfig(seed=0))
    return net, curve


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
