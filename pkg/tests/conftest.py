import math

import numpy as np
import pytest

from leakyguide import WaveguideConfig, solve_modes, table1_config
from leakyguide.helmholtz import bump_source


@pytest.fixture(scope="session")
def table_cfg():
    return table1_config()


@pytest.fixture(scope="session")
def table_spectrum(table_cfg):
    return solve_modes(table_cfg, N=400)


@pytest.fixture(scope="session")
def small_cfg():
    return WaveguideConfig(r1=1.0, r2=2.0, omega=3.0, varsigma=0.5, theta_max=math.pi)


@pytest.fixture(scope="session")
def small_spectrum(small_cfg):
    return solve_modes(small_cfg, N=200)


@pytest.fixture(scope="session")
def table_bump():
    return bump_source((99.7, 100.3), (0.5, 2.5))


@pytest.fixture(scope="session")
def small_bump():
    return bump_source((1.2, 1.8), (0.5, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
