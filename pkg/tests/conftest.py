import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qgebm.grid import Grid
from qgebm.model import ForcingProfiles, Model, PhysParams

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid16():
    return Grid(1.0, 16)


@pytest.fixture(scope="session")
def grid64():
    return Grid(1.0, 64)


@pytest.fixture(scope="session")
def model16(grid16):
    return Model(grid16, PhysParams(), ForcingProfiles.cosine(grid16))


def band_limited(grid, rng, bc, kmax=None, batch=()):
    """Random amplitudes on modes below kmax (spectral array)."""
    N = grid.N
    kmax = N // 4 if kmax is None else kmax
    a = np.zeros(batch + (N, N))
    a[..., :kmax, :kmax] = rng.standard_normal(batch + (kmax, kmax))
    return a
