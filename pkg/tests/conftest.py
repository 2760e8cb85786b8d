import numpy as np
import pytest

from embodiment_imitation.embodiment import normalize, planar_chain
from embodiment_imitation.se3 import Frame, rodrigues


def random_rotation(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rodrigues(axis, rng.uniform(-np.pi, np.pi))


def random_frame(rng):
    return Frame(random_rotation(rng), rng.normal(size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_link():
    return normalize(planar_chain(2))


@pytest.fixture
def three_link():
    return normalize(planar_chain(3))
