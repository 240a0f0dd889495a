import os
import sys

import numpy as np
import pytest

# Modules live at the repository root
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from controlled_paths import sine_field  # noqa: E402
from rough_tensor import lift_sample  # noqa: E402
from tfbm_sampler import DyadicGrid, sample_tfbm  # noqa: E402

H = 0.3
LAM = 1.0


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def sample_l8_d2():
    return sample_tfbm(DyadicGrid(8), H, LAM, 2, seed=11)


@pytest.fixture(scope="session")
def sample_l8_d3():
    return sample_tfbm(DyadicGrid(8), H, LAM, 3, seed=12)


@pytest.fixture(scope="session")
def table_l8_d2(sample_l8_d2):
    return lift_sample(sample_l8_d2, 8)


@pytest.fixture(scope="session")
def table_l6_d2():
    return lift_sample(sample_tfbm(DyadicGrid(6), H, LAM, 2, seed=13), 6)


@pytest.fixture(scope="session")
def table_l6_d1():
    return lift_sample(sample_tfbm(DyadicGrid(6), H, LAM, 1, seed=14), 6)


@pytest.fixture
def small_sine():
    return sine_field(2, 2, scale=0.2)
