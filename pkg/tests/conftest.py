import numpy as np
import pytest
from hypothesis import settings

# numba JIT warmup can blow per-example deadlines on first touch
settings.register_profile("epimisr", deadline=None, max_examples=25)
settings.load_profile("epimisr")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
