"""Borrowing layer: mappings, linearization, normalizing constants."""

import numpy as np
import pytest
from scipy.special import expit, logit

from enrichnpp.borrowing import (
    BaselinePrior,
    DegenerateMarginalError,
    HistoricalSummary,
    MappingKind,
    MappingSpec,
    NormalizationKind,
    NormalizationMethod,
    SingularMappingError,
    delta_method_variance,
    linearize_summary,
    log_c_closed_form,
    log_c_interpolate,
    log_c_mc_grid,
    log_joint_posterior,
    make_historical_summary,
    mapping_h,
    mapping_h_many,
    mapping_jacobian,
)
from enrichnpp.model import CoefficientVector, OutcomeFamily, TrialDataset

BETA = CoefficientVector(-0.2, 0.4, 0.3, 0.65)
MU = 0.3


def cell_etas(beta):
    """Independent four-cell enumeration used as the mapping oracle."""
    b0, b1, b2, b3 = beta.beta0, beta.beta1, beta.beta2, beta.beta3
    return {
        (t, x): b0 + b1 * x + b2 * t + b3 * t * x for t in (0, 1) for x in (0, 1)
    }


def oracle_h(kind, mu, beta):
    eta = cell_etas(beta)
    if kind is MappingKind.IDENTITY_IDENTITY:
        return beta.beta2 + mu * beta.beta3
    if kind is MappingKind.INVERSE_LOGIT:
        f = {k: 1.0 / v for k, v in eta.items()}
    elif kind is MappingKind.LOG_LOGIT:
        f = {k: np.exp(v) for k, v in eta.items()}
    elif kind is MappingKind.IDENTITY_LOGIT:
        f = {k: expit(v) for k, v in eta.items()}
    else:  # marginal log odds ratio
        p = {k: expit(v) for k, v in eta.items()}
        p1 = (1 - mu) * p[1, 0] + mu * p[1, 1]
        p0 = (1 - mu) * p[0, 0] + mu * p[0, 1]
        return logit(p1) - logit(p0)
    return (1 - mu) * (f[1, 0] - f[0, 0]) + mu * (f[1, 1] - f[0, 1])


@pytest.mark.parametrize("kind", list(MappingKind))
def test_mapping_h_against_cell_enumeration(kind):
    spec = MappingSpec(kind, MU)
    assert mapping_h(spec, BETA) == pytest.approx(oracle_h(kind, MU, BETA), rel=1e-12)


@pytest.mark.parametrize("kind", list(MappingKind))
def test_jacobian_matches_finite_differences(kind, rng):
    spec = MappingSpec(kind, MU)
    step = 1e-6
    for _ in range(20):
        b = rng.standard_normal(4)
        beta = CoefficientVector.from_array(b)
        try:
            jac = mapping_jacobian(spec, beta)
        except (SingularMappingError, DegenerateMarginalError):
            continue
        fd = np.empty(4)
        for j in range(4):
            bp, bm = b.copy(), b.copy()
            bp[j] += step
            bm[j] -= step
            fd[j] = (
                mapping_h(spec, CoefficientVector.from_array(bp))
                - mapping_h(spec, CoefficientVector.from_array(bm))
            ) / (2 * step)
        np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("kind", list(MappingKind))
def test_mapping_h_many_matches_scalar(kind, rng):
    spec = MappingSpec(kind, MU)
    B = rng.standard_normal((50, 4))
    many = mapping_h_many(spec, B)
    for i, row in enumerate(B):
        assert many[i] == pytest.approx(mapping_h(spec, CoefficientVector.from_array(row)))


def test_mapping_degeneracies():
    spec = MappingSpec(MappingKind.INVERSE_LOGIT, 0.5)
    with pytest.raises(SingularMappingError):
        mapping_h(spec, CoefficientVector(0.0, 1.0, 1.0, 1.0))
    spec = MappingSpec(MappingKind.LOGIT_LOGIT, 0.5)
    extreme = CoefficientVector(-40.0, 0.0, 0.0, 0.0)
    with pytest.raises(DegenerateMarginalError):
        mapping_h(spec, extreme)
    # the vectorized path clips instead: integration code needs finiteness
    out = mapping_h_many(spec, extreme.as_array()[None, :])
    assert np.isfinite(out).all()
    with pytest.raises(ValueError):
        MappingSpec(MappingKind.LOGIT_LOGIT, 1.2)


def test_delta_method_variance():
    n_t, n_c, p1, p0 = 500, 400, 0.42, 0.55
    expected = 1.0 / (n_t * p1 * (1 - p1)) + 1.0 / (n_c * p0 * (1 - p0))
    assert delta_method_variance(n_t, n_c, p1, p0) == pytest.approx(expected)


def test_generator_bias_is_on_the_summary_scale():
    # at a null coefficient vector the marginal log odds ratio is exactly 0,
    # so the generated estimate equals the injected bias: the implied
    # historical odds ratio is exp(delta)
    null = CoefficientVector(-0.2, 0.4, 0.0, 0.0)
    for delta, or_expected in [(1.0, np.exp(1.0)), (-0.5, np.exp(-0.5))]:
        s = make_historical_summary(
            null, MappingSpec(MappingKind.LOGIT_LOGIT, 0.5), delta, 500, 500
        )
        assert np.exp(s.m_delta[0]) == pytest.approx(or_expected, rel=1e-12)
    assert float(s.m_delta[0]) == pytest.approx(-0.5)


def test_linearization_exact_at_anchor_and_for_linear_mappings(rng):
    anchor = CoefficientVector(-0.2, 0.4, 0.1, 0.5)
    nl = make_historical_summary(
        anchor, MappingSpec(MappingKind.LOGIT_LOGIT, 0.5), 0.2, 500, 500
    )
    lin = linearize_summary(nl, anchor)
    # at the anchor the working model reproduces the exact residual
    r_exact = nl.h(anchor) - nl.m_delta
    r_lin = lin.d_matrix @ anchor.as_array() - lin.m_adjusted
    np.testing.assert_allclose(r_lin, r_exact, atol=1e-12)

    ident = HistoricalSummary(
        m_delta=np.array([0.3]),
        sigma_delta=np.array([[0.02]]),
        mappings=(MappingSpec(MappingKind.IDENTITY_IDENTITY, 0.4),),
    )
    lin = linearize_summary(ident, anchor)
    for _ in range(10):
        b = rng.standard_normal(4)
        exact = ident.h(CoefficientVector.from_array(b)) - ident.m_delta
        approx = lin.d_matrix @ b - lin.m_adjusted
        np.testing.assert_allclose(approx, exact, atol=1e-12)


def scalar_log_c(a, d, m, v, prior):
    """1-D reduction oracle: for h = d'beta, beta ~ N(m0, S0),
    C(a) = E exp(-a (h - m)^2 / (2 v)) has the univariate closed form
    sqrt(s2/(tau2+s2)) * exp(-(mu-m)^2/(2(tau2+s2))) with s2 = v/a."""
    if a == 0.0:
        return 0.0
    mu = float(d @ prior.m0)
    tau2 = float(d @ prior.sigma0 @ d)
    s2 = v / a
    return float(0.5 * np.log(s2 / (tau2 + s2)) - (mu - m) ** 2 / (2 * (tau2 + s2)))


def test_log_c_closed_form_against_univariate_oracle(flat_prior):
    summ = HistoricalSummary(
        m_delta=np.array([0.5]),
        sigma_delta=np.array([[0.016]]),
        mappings=(MappingSpec(MappingKind.IDENTITY_IDENTITY, 0.5),),
    )
    lin = [linearize_summary(summ, CoefficientVector(0, 0, 0, 0))]
    d = lin[0].d_matrix[0]
    for a in (0.0, 0.1, 0.5, 0.9, 1.0):
        oracle = scalar_log_c(a, d, 0.5, 0.016, flat_prior)
        assert log_c_closed_form([a], lin, flat_prior) == pytest.approx(oracle, abs=1e-10)


def test_log_c_closed_form_two_summaries_additive_structure(flat_prior):
    # with orthogonal contrasts d1 = (1,0,0,0), d2 = (0,1,0,0) the prior is
    # diagonal, so log C factorizes into univariate pieces
    s1 = HistoricalSummary(
        m_delta=np.array([0.2]),
        sigma_delta=np.array([[0.1]]),
        mappings=(MappingSpec(MappingKind.IDENTITY_IDENTITY, 0.0),),
    )
    lins = [
        linearize_summary(s1, CoefficientVector(0, 0, 0, 0)),
        linearize_summary(s1, CoefficientVector(0, 0, 0, 0)),
    ]
    object.__setattr__(lins[0], "d_matrix", np.array([[1.0, 0, 0, 0]]))
    object.__setattr__(lins[1], "d_matrix", np.array([[0.0, 1, 0, 0]]))
    got = log_c_closed_form([0.7, 0.3], lins, flat_prior)
    want = scalar_log_c(0.7, lins[0].d_matrix[0], 0.2, 0.1, flat_prior) + scalar_log_c(
        0.3, lins[1].d_matrix[0], 0.2, 0.1, flat_prior
    )
    assert got == pytest.approx(want, abs=1e-10)


def test_monte_carlo_grid_matches_closed_form(flat_prior):
    summ = HistoricalSummary(
        m_delta=np.array([0.5]),
        sigma_delta=np.array([[0.016]]),
        mappings=(MappingSpec(MappingKind.IDENTITY_IDENTITY, 0.5),),
    )
    method = NormalizationMethod(
        NormalizationKind.MONTE_CARLO_GRID, np.linspace(0, 1, 101), 20_000
    )
    table = log_c_mc_grid([summ], flat_prior, method, np.random.default_rng(3))
    lin = [linearize_summary(summ, CoefficientVector(0, 0, 0, 0))]
    closed = np.array([log_c_closed_form([a], lin, flat_prior) for a in table.a])
    assert table.log_c[0] == 0.0
    assert np.max(np.abs(table.log_c - closed)) <= 0.05
    # log C decreases as the summary constrains more prior mass
    assert np.all(np.diff(table.log_c) < 0)
    # interpolation hits the nodes and stays between them
    assert log_c_interpolate(table, 0.0) == 0.0
    mid = log_c_interpolate(table, 0.505)
    assert table.log_c[51] <= mid <= table.log_c[50]


def test_zero_weight_reduces_to_no_borrowing(rng, flat_prior):
    x = (rng.random(80) < 0.5).astype(int)
    t = (rng.random(80) < 0.5).astype(int)
    y = (rng.random(80) < 0.5).astype(float)
    data = TrialDataset(x, t, y, OutcomeFamily.BERNOULLI_LOGIT)
    summ = HistoricalSummary(
        m_delta=np.array([0.3]),
        sigma_delta=np.array([[0.016]]),
        mappings=(MappingSpec(MappingKind.IDENTITY_IDENTITY, 0.5),),
        a_prior_eta=1.0,
        a_prior_nu=1.0,
    )
    lin = [linearize_summary(summ, CoefficientVector(0, 0, 0, 0))]
    offsets = set()
    for _ in range(20):
        b = rng.standard_normal(4)
        with_s = log_joint_posterior(b, [0.0], data, [summ], flat_prior, linearized=lin)
        without = log_joint_posterior(b, [], data, [], flat_prior)
        assert np.isfinite(with_s)
        offsets.add(round(with_s - without, 12))
    assert len(offsets) == 1  # constant offset only


def test_prior_validation():
    with pytest.raises(ValueError):
        BaselinePrior(m0=np.zeros(4), sigma0=-np.eye(4))
    with pytest.raises(ValueError):
        BaselinePrior(m0=np.zeros(4), sigma0=np.eye(3))
    with pytest.raises(ValueError):
        BaselinePrior(m0=np.zeros(4), sigma0=np.eye(4), sigma_shape=-1.0)


def test_sigma_prior_is_proper_density():
    from scipy.integrate import quad

    prior = BaselinePrior(m0=np.zeros(4), sigma0=np.eye(4))
    # log_density_sigma2 drops the IG normalizing constant only; adding it
    # back must integrate to 1 over sigma in (0, inf)
    from scipy.special import gammaln

    log_norm = prior.sigma_shape * np.log(prior.sigma_scale) - gammaln(prior.sigma_shape)
    val, err = quad(
        lambda s: np.exp(prior.log_density_sigma2(s) + log_norm), 1e-6, 50.0
    )
    assert val == pytest.approx(1.0, abs=1e-6)
