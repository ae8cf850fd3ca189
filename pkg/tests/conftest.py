"""Shared fixtures: small datasets and quick sampler settings."""

import numpy as np
import pytest

from enrichnpp.borrowing import BaselinePrior
from enrichnpp.model import CoefficientVector, OutcomeFamily, TrialDataset, generate_outcome


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def flat_prior():
    return BaselinePrior(m0=np.zeros(4), sigma0=25.0 * np.eye(4))


def make_dataset(family, beta, n, rng):
    x = (rng.random(n) < 0.5).astype(int)
    t = (rng.random(n) < 0.5).astype(int)
    y = generate_outcome(family, beta, x, t, rng)
    return TrialDataset(x, t, y, family)


@pytest.fixture
def bernoulli_data(rng):
    beta = CoefficientVector(-0.2, 0.4, 0.0, 0.65)
    return make_dataset(OutcomeFamily.BERNOULLI_LOGIT, beta, 400, rng)


@pytest.fixture
def gaussian_data(rng):
    beta = CoefficientVector(0.1, -0.3, 0.5, -0.4, 1.2)
    return make_dataset(OutcomeFamily.GAUSSIAN_IDENTITY, beta, 300, rng)
