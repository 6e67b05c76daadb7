import os

import hypothesis
import numpy as np
import pytest

from completion_core import make_partial_covariance
from domain_geometry import make_grid, make_serrated_domain

hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

THREE_INTERVALS = [[0, 0.5], [0.3, 0.75], [0.6, 1]]
FIVE_INTERVALS = [[0, 0.3], [0.2, 0.5], [0.4, 0.7], [0.6, 0.9], [0.8, 1]]


@pytest.fixture
def random_psd():
    """Factory for dense random covariance matrices, full rank unless rank is given."""
    def make(n: int, seed: int, rank: int = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        C = rng.standard_normal((n, rank or n))
        return C @ C.T / n
    return make


@pytest.fixture
def brownian():
    def make(n: int) -> np.ndarray:
        nodes = make_grid(n).nodes
        return np.minimum(nodes[:, None], nodes[None, :])
    return make


@pytest.fixture
def scalar_pc():
    """3-node grid {0, 0.5, 1} with I1 = {0, 0.5}, I2 = {0.5, 1}."""
    grid = make_grid(3)
    domain = make_serrated_domain(grid, [[0, 0.5], [0.5, 1]])
    K = np.array([
        [1.0, 0.3, 0.0],
        [0.3, 1.0, 0.4],
        [0.0, 0.4, 1.0],
    ])
    return make_partial_covariance(domain, K)


@pytest.fixture
def three_interval_domain():
    return make_serrated_domain(make_grid(31), THREE_INTERVALS)


@pytest.fixture
def five_interval_domain():
    return make_serrated_domain(make_grid(31), FIVE_INTERVALS)
