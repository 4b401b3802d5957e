import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from segsearch.market import Segmentation

settings.register_profile(
    "fixed",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fixed")


def random_segmentation(rng: np.random.Generator, prior, max_submarkets: int = 5) -> Segmentation:
    """Random Bayes-consistent segmentation: each type spreads its mass over submarkets."""
    s = int(rng.integers(1, max_submarkets + 1))
    split = rng.dirichlet(np.full(s, 0.7), size=prior.n)
    joint = prior.weights[:, None] * split
    weights = joint.sum(axis=0)
    keep = weights > 1e-9
    joint, weights = joint[:, keep], weights[keep]
    posts = (joint / weights).T
    posts = posts / posts.sum(axis=1, keepdims=True)
    return Segmentation(weights / weights.sum(), posts)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
