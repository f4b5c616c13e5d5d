import numpy as np
import pytest

from citnet import tensor as T


@pytest.fixture(autouse=True)
def finite_checks():
    """Every op in the suite must stay in the finite domain."""
    T.set_finite_checks(True)
    yield
    T.set_finite_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
