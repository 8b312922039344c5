import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("pd", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("pd")


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0, np.log(cond), n))
    return (q * w) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
