import numpy as np
import pytest

from activetrack.features import generate_manifold_set


@pytest.fixture(scope="session")
def default_manifolds():
    """The standard 5-instance, 64-dim certified manifold set."""
    return generate_manifold_set(num_instances=5, dim=64, cohesion_delta=0.8,
                                 separation_eta=0.2, num_view_dirs=4, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
