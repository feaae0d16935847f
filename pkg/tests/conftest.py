import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from asconvex.multiplier import make_multiplier
from asconvex.spectral_core import SpectralField, make_grid

settings.register_profile(
    "asconvex", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("asconvex")


@pytest.fixture(scope="session")
def msqg():
    return make_multiplier("msqg", {"delta": 0.0})


@pytest.fixture(scope="session")
def grid32():
    return make_grid(32)


def random_coeffs(grid, shape=(), seed=0, kmax=None, zero_mean=True):
    """Random real band-limited field as a coefficient array."""
    rng = np.random.default_rng(seed)
    phys = rng.normal(size=shape + (grid.n, grid.n))
    c = grid.forward(phys)
    if kmax is not None:
        c = c * (grid.kabs <= kmax)
    if zero_mean:
        c[..., 0, 0] = 0.0
    return c


def random_field(grid, rank="scalar", seed=0, kmax=None):
    shape = {"scalar": (), "vector": (2,), "tensor": (2, 2)}[rank]
    return SpectralField(grid, random_coeffs(grid, shape, seed, kmax))
