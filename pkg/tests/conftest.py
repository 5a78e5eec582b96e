import numpy as np
import pytest
from hypothesis import settings

from ancillary_pricing import Logistic, Normal, PriceBox, Uniform
from ancillary_pricing.pricing import ShockTriple

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def unif():
    return Uniform(-2.0, 2.0)


@pytest.fixture
def standard_triple():
    u = Uniform(-2.0, 2.0)
    return ShockTriple(u, u, u)


@pytest.fixture
def box():
    return PriceBox(0.1, 1.0)


ALL_KINDS = [Uniform(-2.0, 2.0), Normal(0.0, 1.0), Logistic(0.0, 1.0)]


@pytest.fixture(params=ALL_KINDS, ids=lambda d: d.kind)
def any_dist(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
