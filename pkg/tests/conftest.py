import numpy as np
import pytest

from barylab import spaces


@pytest.fixture(scope="session")
def interval40():
    return spaces.build_model_space("interval", 40, length=1.0)


@pytest.fixture(scope="session")
def circle32():
    return spaces.build_model_space("circle", 32, circumference=1.0)


@pytest.fixture(scope="session")
def pair_space():
    """Two points at unit distance with unit reference weights."""
    return spaces.DiscreteSpace(np.array([[0.0, 1.0], [1.0, 0.0]]),
                                np.array([1.0, 1.0]), dim_n=1, curv_k=0.0,
                                label="pair")


def random_measure(space, rng, low=0.01):
    return spaces.make_measure(space, rng.uniform(low, 1.0, space.point_count))
