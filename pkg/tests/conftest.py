import numpy as np
import pytest

from ufdoppler.core import SequenceDims
from ufdoppler.phantom import PhantomConfig, generate


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_PHANTOM = PhantomConfig(
    dims=SequenceDims(32, 32, 60),
    r_true=3,
    vessel_count=2,
    scatterer_spacing_px=16.0,
    seed=3,
)


@pytest.fixture(scope="session")
def small_phantom():
    return generate(SMALL_PHANTOM)
