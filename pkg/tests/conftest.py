import numpy as np
import pytest

from spdshift import core


def random_sym(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * 0.5 * (a + a.T)


def random_spd(rng, d, scale=0.7):
    return core.spd_exp(random_sym(rng, d, scale))


def random_invertible(rng, d):
    while True:
        a = rng.standard_normal((d, d))
        if abs(np.linalg.det(a)) > 1e-3:
            return a


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
