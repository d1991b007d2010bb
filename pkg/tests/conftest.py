"""Shared models, profiles and envelope contexts.

Profiles are expensive enough to solve once per session; everything built on them is read-only.
"""
import numpy as np
import pytest

from shocklab.profile import solve_profile
from shocklab.systems import endstate_data, make_burgers, make_psystem
from shocklab.templates import build_context


@pytest.fixture(scope="session")
def burgers():
    return make_burgers()


@pytest.fixture(scope="session")
def psystem():
    return make_psystem(2.0, 1.0, 2.0)


@pytest.fixture(scope="session")
def burgers_profile(burgers):
    return solve_profile(burgers, 40.0, 8001)


@pytest.fixture(scope="session")
def psystem_profile(psystem):
    # slowest tail rate is about 0.37, so X = 60 keeps e^{-alpha X} below 1e-8
    return solve_profile(psystem, 60.0, 12001)


@pytest.fixture(scope="session")
def burgers_ctx(burgers, burgers_profile):
    return build_context(endstate_data(burgers, "-"), endstate_data(burgers, "+"), burgers_profile.decay_rate)


@pytest.fixture(scope="session")
def psystem_ctx(psystem, psystem_profile):
    return build_context(endstate_data(psystem, "-"), endstate_data(psystem, "+"), psystem_profile.decay_rate)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
