"""Shared fixtures: one small simulated dataset and cheap fits on it.

The expensive acceptance studies live in test_acceptance.py; everything
here is sized to keep the module tests fast.
"""

import numpy as np
import pytest

from splinehaz.basis import make_knots
from splinehaz.inference import FitOptions, laplace_sample, mcmc_sample
from splinehaz.model import ModelSpec, SurvivalDataset
from splinehaz.simgen import ExponentialDGM, simulate_arm


def make_exponential_dataset(n=150, rate=0.2, censor=5.0, seed=42):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    time, event = simulate_arm(ExponentialDGM(rate), n, rng, censor_time=censor)
    return SurvivalDataset(time=time, event=event)


@pytest.fixture(scope="session")
def exp_data():
    return make_exponential_dataset()


@pytest.fixture(scope="session")
def exp_spec(exp_data):
    events = exp_data.time[exp_data.event == 1.0]
    config = make_knots(events, df=6, upper=float(exp_data.time.max()))
    return ModelSpec(config=config)


@pytest.fixture(scope="session")
def exp_laplace(exp_spec, exp_data):
    return laplace_sample(exp_spec, exp_data, n_draws=4000, seed=7)


@pytest.fixture(scope="session")
def exp_mcmc(exp_spec, exp_data):
    options = FitOptions(chains=2, draws=400, warmup=400)
    return mcmc_sample(exp_spec, exp_data, seed=7, options=options)
