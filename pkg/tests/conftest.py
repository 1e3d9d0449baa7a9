import numpy as np
import pytest

from psld.recipe import PsldParams


@pytest.fixture
def params():
    """Canonical critically damped setting: Gamma=0.01, nu=4.01, M^-1=4,
    constant beta=8, gamma0=0.04."""
    return PsldParams.critically_damped(0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
