import numpy as np
import pytest

from shmev.ingest import elicit_priors
from shmev.simulate import ScenarioConfig, simulate_scenario


@pytest.fixture(scope="session")
def wei_small():
    """Small WEI scenario shared across model/sampler tests (S=5, J=5)."""
    return simulate_scenario(ScenarioConfig(n_sites=5, train_blocks=5, test_blocks=50, seed=42))


@pytest.fixture(scope="session")
def wei_small_prior(wei_small):
    return elicit_priors(wei_small.train)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240601)
