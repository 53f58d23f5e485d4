import numpy as np
import pytest

from ctsrivc.lti import ThetaVector


@pytest.fixture
def first_order():
    """10 / (0.1 p + 1), sampled at T = 0.01"""
    return ThetaVector([0.1], [10.0])


@pytest.fixture
def second_order():
    """1 / (0.04 p^2 + 0.2 p + 1), sampled at T = 0.1"""
    return ThetaVector([0.04, 0.2], [1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
