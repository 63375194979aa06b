import numpy as np
import pytest


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def crandn(gen, *shape):
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / np.sqrt(2.0)
