import numpy as np
import pytest

from uck.kernel import ModelConfig
from uck.tasks import encode_planning, encode_reachability, encode_sat


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """Reachability-shaped model small enough for finite-difference checks."""
    return ModelConfig.for_task('reachability', d_model=8, d_rule=8, n_rules=3, n_steps=2, dropout=0.0)


@pytest.fixture
def reach_instance():
    # 0 -> 1 -> 2 -> 3, node 4 isolated; 0 reaches 3
    return encode_reachability([(0, 1), (1, 2), (2, 3)], 5, 0, 3)


@pytest.fixture
def planning_instance():
    grid = np.array([
        [0, 0, 1],
        [1, 0, 1],
        [1, 0, 0],
    ], dtype=bool)
    return encode_planning(grid, (0, 0), (2, 2))


@pytest.fixture
def sat_instance():
    return encode_sat([[1, 2], [-1, 2], [-2, 3]], 3)


@pytest.fixture
def testing_config():
    from config import TestingConfig
    return TestingConfig
