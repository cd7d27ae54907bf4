import numpy as np
import pytest

from bodykit.synthetic import make_synthetic_model


@pytest.fixture(scope="session")
def rigid_model():
    return make_synthetic_model(24, rigid=True)


@pytest.fixture(scope="session")
def soft_model():
    return make_synthetic_model(24)


@pytest.fixture(scope="session")
def chain_model():
    return make_synthetic_model(5, rigid=True, layout="chain", with_shape=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
