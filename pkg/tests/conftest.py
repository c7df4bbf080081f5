"""Shared fixtures and the ``slow`` marker for long-running experiments."""

import numpy as np
import pytest

from online_quantile.learner import EstimatorConfig, Mode
from online_quantile.simlab import NoiseLaw, make_sobolev_truth


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance experiment (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Deterministic generator for a single test."""
    return np.random.default_rng(12345)


@pytest.fixture
def single_config():
    """Two-covariate median learner in single-sample mode."""
    return EstimatorConfig(tau=0.5, R=3.0, A=4.0, s=2.0, p=2)


@pytest.fixture
def batch_config():
    """Same learner in mini-batch mode."""
    return EstimatorConfig(tau=0.5, R=3.0, A=4.0, s=2.0, p=2, mode=Mode.MINI_BATCH)


@pytest.fixture
def small_truth():
    """Cheap truth (short sieve) for fast lab tests."""
    return make_sobolev_truth(p=2, s=2.0, Q=1.0, R=3.0, seed=7, tau=0.5,
                              noise=NoiseLaw.gaussian(0.5), J_truth=64)
