import numpy as np
import pytest

from permabc import ObservedData, SimulatedData


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def toy_pair():
    """Small observed/simulated pair with distinct compartments."""
    y = ObservedData(np.array([[0.0, 1.0], [2.0, -1.0], [4.0, 4.0]]))
    z = SimulatedData(np.array([[0.5, 1.0], [2.0, -1.5], [3.0, 5.0]]))
    return y, z


def random_observed(rng, k, n, weighted=False):
    weights = rng.uniform(0.5, 2.0, size=k) if weighted else None
    return ObservedData(rng.normal(size=(k, n)), weights=weights)
