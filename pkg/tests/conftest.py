import numpy as np
import pytest

from activelattice.lattice import RngStream


@pytest.fixture
def rng():
    return RngStream(20240611)


def pytest_configure(config):
    np.seterr(over="raise", invalid="raise")
