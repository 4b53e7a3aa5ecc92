import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("quphot", deadline=None, max_examples=60)
settings.load_profile("quphot")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
