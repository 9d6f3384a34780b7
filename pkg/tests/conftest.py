import numpy as np
import pytest

from src.mesh import alfeld_split, structured_unit_square
from src.multigrid import discretize
from src.space import build_space


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def two_level():
    """4x4 coarse grid plus one refinement: 418 and 1602 DOFs."""
    return discretize(4, 2)


@pytest.fixture(scope="session")
def coarse_level(two_level):
    return two_level.levels[0]


@pytest.fixture(scope="session")
def fine_level(two_level):
    return two_level.levels[1]


@pytest.fixture(scope="session")
def tiny_space():
    """Alfeld split of the 2x2 grid."""
    return build_space(alfeld_split(structured_unit_square(2)))
