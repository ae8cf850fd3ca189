"""Decision engine: subspace selection, enriched effect, stopping rules."""

import numpy as np
import pytest

from enrichnpp.design import (
    DecisionKind,
    DesignConfig,
    Direction,
    correct_subspace,
    effective_subspace,
    empirical_weights,
    enriched_effect_draws,
    final_analysis,
    interim_decision,
)
from enrichnpp.model import CoefficientVector, TrialDataset
from enrichnpp.sampler import PosteriorDraws


def draws_from_gamma(gamma0, gamma1):
    """Posterior draws with beta2 = gamma0 and beta3 = gamma1 - gamma0."""
    g0 = np.asarray(gamma0, dtype=float)
    g1 = np.asarray(gamma1, dtype=float)
    beta = np.zeros((g0.size, 4))
    beta[:, 2] = g0
    beta[:, 3] = g1 - g0
    return PosteriorDraws(
        beta_draws=beta,
        a_draws=np.empty((g0.size, 0)),
        sigma_draws=None,
        chain_ids=np.zeros(g0.size),
    )


def test_effective_subspace_selection():
    n = 1000
    rng = np.random.default_rng(0)
    # gamma(0) concentrated above 0, gamma(1) centered at 0
    draws = draws_from_gamma(1.0 + 0.1 * rng.standard_normal(n), 0.05 * rng.standard_normal(n))
    assert effective_subspace(draws, (0, 1), 0.0, 0.05, Direction.HIGHER_BETTER) == {0}
    # under lower-better the sign flips and nothing qualifies -> fallback
    assert effective_subspace(draws, (0, 1), 0.0, 0.05, Direction.LOWER_BETTER) == {0, 1}


def test_effective_subspace_threshold_is_strict():
    # exactly 95% of draws favorable does not clear P > 1 - alpha
    gamma0 = np.concatenate([np.full(95, 1.0), np.full(5, -1.0)])
    draws = draws_from_gamma(gamma0, np.full(100, -1.0))
    assert effective_subspace(draws, (0, 1), 0.0, 0.05, Direction.HIGHER_BETTER) == {0, 1}


def test_empirical_weights():
    data = TrialDataset([0, 0, 0, 1], [0, 1, 0, 1], [0.0, 1.0, 0.0, 1.0])
    assert empirical_weights(data, {0, 1}) == {0: 0.75, 1: 0.25}
    assert empirical_weights(data, {1}) == {1: 1.0}
    no_ones = TrialDataset([0, 0], [0, 1], [0.0, 1.0])
    with pytest.raises(ValueError):
        empirical_weights(no_ones, {1})


def test_enriched_effect_draws_signs():
    draws = draws_from_gamma(np.array([1.0, 2.0]), np.array([3.0, 5.0]))
    delta = enriched_effect_draws(draws, {0: 0.25, 1: 0.75}, Direction.HIGHER_BETTER)
    np.testing.assert_allclose(delta, [0.25 * 1 + 0.75 * 3, 0.25 * 2 + 0.75 * 5])
    flipped = enriched_effect_draws(draws, {0: 0.25, 1: 0.75}, Direction.LOWER_BETTER)
    np.testing.assert_allclose(flipped, -delta)
    with pytest.raises(ValueError):
        enriched_effect_draws(draws, {0: 0.5, 1: 0.2}, Direction.HIGHER_BETTER)


def test_interim_decision_precedence():
    cfg = DesignConfig(n_max=100, interim_ns=(50,), efficacy_cut=0.9, futility_cut=0.6)
    # all draws positive: efficacy fires even though P(delta < 0) = 0
    d = interim_decision(np.full(100, 1.0), cfg, {0, 1})
    assert d.kind is DecisionKind.STOP_EFFICACY and d.prob_efficacy == 1.0
    d = interim_decision(np.full(100, -1.0), cfg, {0, 1})
    assert d.kind is DecisionKind.STOP_FUTILITY and d.prob_futility == 1.0
    mixed = np.concatenate([np.full(50, 1.0), np.full(50, -1.0)])
    d = interim_decision(mixed, cfg, {0})
    assert d.kind is DecisionKind.CONTINUE_ENRICHED
    assert d.subspace == frozenset({0})


def test_final_analysis_strict_threshold():
    cfg = DesignConfig(n_max=100, interim_ns=(50,), efficacy_cut=0.9)
    exactly_at_cut = np.concatenate([np.full(90, 1.0), np.full(10, -1.0)])
    assert not final_analysis(exactly_at_cut, cfg)
    above = np.concatenate([np.full(91, 1.0), np.full(9, -1.0)])
    assert final_analysis(above, cfg)


def test_correct_subspace():
    truth = CoefficientVector(0, 0, 0.0, 0.65)  # only x = 1 benefits
    assert correct_subspace({1}, truth, 0.0, Direction.HIGHER_BETTER)
    assert not correct_subspace({0, 1}, truth, 0.0, Direction.HIGHER_BETTER)
    lower = CoefficientVector(0, 0, 0.47, -0.94)  # gamma(1) = -0.47 favorable
    assert correct_subspace({1}, lower, 0.0, Direction.LOWER_BETTER)
    assert not correct_subspace({1}, lower, 0.0, Direction.HIGHER_BETTER)


def test_design_config_validation():
    with pytest.raises(ValueError):
        DesignConfig(n_max=100, interim_ns=())
    with pytest.raises(ValueError):
        DesignConfig(n_max=100, interim_ns=(60, 50))
    with pytest.raises(ValueError):
        DesignConfig(n_max=100, interim_ns=(100,))
    with pytest.raises(ValueError):
        DesignConfig(n_max=100, interim_ns=(50,), efficacy_cut=1.0)
    with pytest.raises(ValueError):
        DesignConfig(n_max=100, interim_ns=(50,), alpha=0.7)
