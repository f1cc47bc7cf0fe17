import numpy as np
import pytest

from depsolar.plant import TrackerParams, make_tracker_model


@pytest.fixture
def tracker():
    return make_tracker_model(TrackerParams())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
