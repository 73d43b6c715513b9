import hypothesis
import numpy as np
import pytest

from mmlq.scenarios import micro_instance, scalar_gaussian, two_minor_binary

hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def gauss():
    return scalar_gaussian()


@pytest.fixture
def micro():
    return micro_instance()


@pytest.fixture
def two_minor():
    return two_minor_binary()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
