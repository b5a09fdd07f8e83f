import numpy as np
import pytest

from hjblab.spectral import SpectralBasis


@pytest.fixture(scope="session")
def basis64():
    return SpectralBasis(64)


@pytest.fixture(scope="session")
def basis16():
    return SpectralBasis(16)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
