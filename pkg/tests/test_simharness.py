"""Trial harness: determinism, scheduling invariance, degenerate designs."""

import dataclasses

import numpy as np
import pytest

from enrichnpp.borrowing import BaselinePrior, MappingKind, NormalizationKind, NormalizationMethod
from enrichnpp.design import DesignConfig, Direction, StopReason
from enrichnpp.model import CoefficientVector, OutcomeFamily
from enrichnpp.sampler import SamplerConfig
from enrichnpp.simharness import (
    ScenarioConfig,
    SummaryGeneratorSpec,
    resolve_summaries,
    run_oc,
    run_trial,
    sweep,
)

FAST_SAMPLER = SamplerConfig(n_iter=300, n_warmup=150)


def small_scenario(**overrides):
    base = dict(
        family=OutcomeFamily.BERNOULLI_LOGIT,
        beta_true=CoefficientVector(-0.2, 0.4, 0.0, 0.65),
        design=DesignConfig(n_max=120, interim_ns=(80,)),
        prior=BaselinePrior(m0=np.zeros(4), sigma0=25.0 * np.eye(4)),
        summaries=(),
        sampler=FAST_SAMPLER,
        n_reps=8,
        base_seed=11,
        scenario_id="small",
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def results_equal(a, b):
    return (
        a.stop_stage == b.stop_stage
        and a.stop_reason == b.stop_reason
        and a.final_n == b.final_n
        and a.final_subspace == b.final_subspace
        and a.success == b.success
        and a.futility_met == b.futility_met
        and np.array_equal(a.mean_a, b.mean_a)
        and a.trace == b.trace
    )


def test_run_trial_deterministic():
    sc = small_scenario()
    assert results_equal(run_trial(sc, 3), run_trial(sc, 3))
    assert not results_equal(run_trial(sc, 3), run_trial(sc, 4))


def test_no_borrow_sentinel_matches_empty_summaries():
    # a generator with n_t = 0 must be bit-identical to no summaries at all
    sc_empty = small_scenario()
    sc_sentinel = small_scenario(
        summaries=(SummaryGeneratorSpec(n_t=0, mapping=MappingKind.LOGIT_LOGIT),)
    )
    assert resolve_summaries(sc_sentinel) == []
    for rid in range(4):
        assert results_equal(run_trial(sc_empty, rid), run_trial(sc_sentinel, rid))


def test_generator_resolution():
    sc = small_scenario(
        summaries=(
            SummaryGeneratorSpec(n_t=0),
            SummaryGeneratorSpec(n_t=400, delta_bias=0.2, mapping=MappingKind.LOGIT_LOGIT),
        )
    )
    resolved = resolve_summaries(sc)
    assert len(resolved) == 1
    assert resolved[0].sigma_delta[0, 0] > 0


def test_run_oc_worker_invariance():
    sc = small_scenario()
    oc1 = run_oc(sc, workers=1)
    oc2 = run_oc(sc, workers=2)
    assert oc1.efficacy_rate == oc2.efficacy_rate
    assert oc1.futility_rate == oc2.futility_rate
    assert oc1.ess == oc2.ess
    assert oc1.n_reps_completed == sc.n_reps


def test_trace_and_draws_sink():
    sc = small_scenario()
    sink = []
    res = run_trial(sc, 0, draws_sink=sink)
    assert len(sink) == res.stop_stage + 1
    stage, draws, data = sink[-1]
    assert stage == res.stop_stage
    assert len(data) == res.final_n
    assert draws.n_draws == FAST_SAMPLER.n_iter
    assert [rec["stage"] for rec in res.trace] == list(range(res.stop_stage + 1))


def test_unreachable_thresholds_run_to_max_n():
    # efficacy needs P > 0.9999 above a huge margin and futility needs
    # P < -inf in effect, so every replicate must reach n_max
    design = DesignConfig(
        n_max=120,
        interim_ns=(80,),
        b1=1e6,
        b2=-1e6,
        efficacy_cut=0.9999,
        futility_cut=0.9999,
    )
    sc = small_scenario(design=design, n_reps=4)
    oc = run_oc(sc)
    assert oc.ess == 120.0
    assert oc.efficacy_rate == 0.0 and oc.futility_rate == 0.0


def test_generalized_power_none_under_null():
    null = small_scenario(beta_true=CoefficientVector(-0.2, 0.4, 0.0, 0.0), n_reps=4)
    assert run_oc(null).generalized_power is None
    alt = small_scenario(n_reps=4)
    assert run_oc(alt).generalized_power is not None


def test_gaussian_family_end_to_end():
    sc = small_scenario(
        family=OutcomeFamily.GAUSSIAN_IDENTITY,
        beta_true=CoefficientVector(0.0, 0.0, 0.47, -0.94, 1.0),
        design=DesignConfig(
            n_max=120, interim_ns=(80,), efficacy_cut=0.975, direction=Direction.LOWER_BETTER
        ),
        n_reps=4,
    )
    oc = run_oc(sc)
    assert oc.n_reps_completed == 4
    res = run_trial(sc, 0)
    assert res.stop_reason in set(StopReason)


def test_sweep_isolates_scenario_failures():
    good = small_scenario(n_reps=4)
    # two summaries on the exact-mapping path are unsupported: every
    # replicate fails and the scenario must abort into a NaN row
    bad = small_scenario(
        summaries=(
            SummaryGeneratorSpec(n_t=400, mapping=MappingKind.LOGIT_LOGIT),
            SummaryGeneratorSpec(n_t=400, mapping=MappingKind.LOGIT_LOGIT),
        ),
        linearized=False,
        normalization=NormalizationMethod(
            NormalizationKind.MONTE_CARLO_GRID, np.linspace(0, 1, 11), 500
        ),
        n_reps=4,
        scenario_id="bad",
    )
    out = sweep([good, bad])
    assert out[0].n_reps_completed == 4
    assert out[1].n_reps_completed == 0
    assert np.isnan(out[1].efficacy_rate)
    assert "error" in out[1].mc_se
