import numpy as np
import pytest


def random_hermitian(rng, n):
    matrix = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (matrix + matrix.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
