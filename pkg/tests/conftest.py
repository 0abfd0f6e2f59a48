import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_kernels(rng, B, K):
    k = rng.random((B, K, K))
    return k / k.sum(axis=(1, 2), keepdims=True)


def random_field(rng, B, H, W):
    m = rng.random((B, H, W)) + 1e-3
    return m / m.sum(axis=0, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
