import numpy as np
import pytest

from qixai import fixture


@pytest.fixture(scope="session")
def smallcnn():
    return fixture.fixture_model()


@pytest.fixture(scope="session")
def batch64():
    return fixture.fixture_batch(64)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
