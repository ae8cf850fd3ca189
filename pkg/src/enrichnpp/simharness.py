"""Replicate-level trial simulation and operating characteristics.

Each replicate is fully determined by (base_seed, replicate_id): enrollment,
outcomes, Monte Carlo normalization, and MCMC all draw from substreams of
one seed sequence, so results are bit-identical regardless of how replicates
are scheduled across workers.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logit

from . import borrowing, design, model
from .borrowing import (
    BaselinePrior,
    GridTable,
    HistoricalSummary,
    MappingKind,
    MappingSpec,
    NormalizationKind,
    NormalizationMethod,
    linearize_summary,
    log_c_mc_grid,
    make_historical_summary,
)
from .design import (
    DecisionKind,
    DesignConfig,
    Direction,
    StopReason,
    TrialResult,
    correct_subspace,
    effective_subspace,
    empirical_weights,
    enriched_effect_draws,
    interim_decision,
)
from .fastchain import build_fast_density
from .model import (
    CoefficientVector,
    DegenerateDesignError,
    OutcomeFamily,
    TrialDataset,
    generate_outcome,
    mle_fit,
    sample_subject,
)
from .sampler import PosteriorDraws, SamplerConfig, run_adaptive_chain

__all__ = [
    "SummaryGeneratorSpec",
    "ScenarioConfig",
    "OperatingCharacteristics",
    "ReplicateFailure",
    "resolve_summaries",
    "scenario_grid_table",
    "fit_posterior",
    "run_trial",
    "run_oc",
    "sweep",
]

CANDIDATE_XS = (0, 1)


@dataclass(frozen=True)
class SummaryGeneratorSpec:
    """Recipe for reverse-engineering a historical summary from beta_true.

    n_t = 0 is the no-borrowing sentinel: the summary is omitted entirely.
    """

    delta_bias: float = 0.0
    n_t: int = 500
    n_c: int = 500
    mu_x_hist: float = 0.5
    mapping: MappingKind = MappingKind.LOGIT_LOGIT
    a_prior_eta: float = 4.0
    a_prior_nu: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to simulate one design configuration."""

    family: OutcomeFamily
    beta_true: CoefficientVector
    design: DesignConfig
    prior: BaselinePrior
    summaries: tuple = ()
    prevalence: float = 0.5
    rand_ratio: float = 0.5
    normalization: NormalizationMethod = field(
        default_factory=lambda: NormalizationMethod(NormalizationKind.CLOSED_FORM_LINEARIZED)
    )
    linearized: bool = True
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    n_reps: int = 1000
    base_seed: int = 0
    scenario_id: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "summaries", tuple(self.summaries))
        if not self.linearized and any(
            True for _ in resolve_summaries(self)
        ) and self.normalization.kind is not NormalizationKind.MONTE_CARLO_GRID:
            raise ValueError(
                "nonlinear (exact-mapping) fits require Monte Carlo grid normalization"
            )

    def generator_meta(self):
        """(n_t, delta, mu_x_hist) of the first generator spec, for reports."""
        for s in self.summaries:
            if isinstance(s, SummaryGeneratorSpec):
                return s.n_t, s.delta_bias, s.mu_x_hist
        return 0, None, None


@dataclass
class OperatingCharacteristics:
    scenario_id: str
    efficacy_rate: float
    generalized_power: float | None
    futility_rate: float
    ess: float
    mean_a: np.ndarray
    n_reps_completed: int
    n_failed: int
    mc_se: dict


class ReplicateFailure(RuntimeError):
    def __init__(self, replicate_id: int, cause: Exception):
        super().__init__(f"replicate {replicate_id} failed: {cause!r}")
        self.replicate_id = replicate_id
        self.cause = cause


def resolve_summaries(scenario: ScenarioConfig):
    """Materialize generator specs; drop n_t = 0 (no borrowing) entries."""
    out = []
    for s in scenario.summaries:
        if isinstance(s, HistoricalSummary):
            out.append(s)
            continue
        if s.n_t == 0:
            continue
        out.append(
            make_historical_summary(
                scenario.beta_true,
                MappingSpec(s.mapping, s.mu_x_hist),
                s.delta_bias,
                s.n_t,
                s.n_c,
                a_prior=(s.a_prior_eta, s.a_prior_nu),
            )
        )
    return out


def scenario_grid_table(scenario: ScenarioConfig, summaries=None) -> GridTable | None:
    """Deterministic log C grid for exact-mapping fits; shared by replicates.

    C(a) depends only on the summaries and baseline prior, not on trial
    data, so one table (seeded from base_seed alone) serves every fit.
    """
    if scenario.linearized:
        return None
    if summaries is None:
        summaries = resolve_summaries(scenario)
    if not summaries:
        return None
    ss = np.random.SeedSequence(entropy=scenario.base_seed, spawn_key=(0xC0FFEE,))
    rng = np.random.Generator(np.random.PCG64(ss))
    return log_c_mc_grid(summaries, scenario.prior, scenario.normalization, rng)


def _anchor_fit(data: TrialDataset, prior: BaselinePrior):
    try:
        res = mle_fit(data)
        return res, None
    except DegenerateDesignError:
        cov = prior.sigma0.copy()
        beta = CoefficientVector.from_array(prior.m0, 1.0)
        return model.MleResult(beta=beta, cov=cov, stabilized=True), "degenerate-anchor"


def fit_posterior(
    data: TrialDataset,
    scenario: ScenarioConfig,
    summaries,
    rng: np.random.Generator,
    grid_table: GridTable | None = None,
) -> PosteriorDraws:
    """One posterior fit: anchor MLE, normalization, adaptive chain(s)."""
    anchor, flag = _anchor_fit(data, scenario.prior)
    linearized = None
    if summaries and scenario.linearized:
        linearized = [linearize_summary(s, anchor.beta) for s in summaries]
    if summaries and not scenario.linearized and grid_table is None:
        grid_table = scenario_grid_table(scenario, summaries)
    fd = build_fast_density(
        data,
        scenario.prior,
        summaries,
        linearized=linearized,
        grid_table=grid_table,
    )
    has_sigma = fd.has_sigma
    n_hist = len(summaries)
    theta0 = np.empty(fd.dim)
    theta0[:4] = anchor.beta.as_array()
    pos = 4
    scales = np.empty(fd.dim)
    scales[:4] = np.clip(np.sqrt(np.diag(anchor.cov)), 1e-3, 1.0)
    if has_sigma:
        theta0[pos] = np.log(max(anchor.beta.sigma, 1e-6))
        scales[pos] = 0.1
        pos += 1
    for h, s in enumerate(summaries):
        a_mean = s.a_prior_eta / (s.a_prior_eta + s.a_prior_nu)
        theta0[pos + h] = logit(np.clip(a_mean, 1e-6, 1 - 1e-6))
        scales[pos + h] = 0.5
    lp0 = fd.logpost(theta0)
    jit_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
    tries = 0
    while not np.isfinite(lp0):
        tries += 1
        if tries > 100:
            raise RuntimeError("initialization failure: no finite-density start")
        theta0 = theta0 + 0.1 * jit_rng.standard_normal(fd.dim)
        lp0 = fd.logpost(theta0)
    cfg = scenario.sampler
    chain_rngs = rng.spawn(cfg.n_chains)
    all_draws, ids, acc = [], [], []
    for c, crng in enumerate(chain_rngs):
        draws, rate = run_adaptive_chain(
            fd.batch,
            theta0,
            lp0,
            scales,
            cfg.n_iter,
            cfg.n_warmup,
            cfg.target_accept,
            crng,
        )
        all_draws.append(draws)
        ids.append(np.full(draws.shape[0], c))
        acc.append(rate)
    theta_draws = np.vstack(all_draws)
    pos = 4
    sigma_draws = None
    if has_sigma:
        sigma_draws = np.exp(theta_draws[:, pos])
        pos += 1
    if n_hist:
        a_draws = 1.0 / (1.0 + np.exp(-theta_draws[:, pos:]))
    else:
        a_draws = np.empty((theta_draws.shape[0], 0))
    return PosteriorDraws(
        beta_draws=theta_draws[:, :4],
        a_draws=a_draws,
        sigma_draws=sigma_draws,
        chain_ids=np.concatenate(ids),
        mean_accept=float(np.mean(acc)),
    )


def run_trial(
    scenario: ScenarioConfig,
    replicate_id: int,
    grid_table: GridTable | None = None,
    draws_sink: list | None = None,
) -> TrialResult:
    """Simulate one adaptive enrichment trial replicate end to end.

    When ``draws_sink`` is a list, a ``(stage, draws, data)`` tuple is
    appended after every posterior fit so callers can dump full artifacts.
    """
    ss = np.random.SeedSequence(
        entropy=scenario.base_seed, spawn_key=(int(replicate_id),)
    )
    data_ss, fit_ss = ss.spawn(2)
    data_rng = np.random.Generator(np.random.PCG64(data_ss))
    fit_rng = np.random.Generator(np.random.PCG64(fit_ss))
    summaries = resolve_summaries(scenario)
    if grid_table is None:
        grid_table = scenario_grid_table(scenario, summaries)
    cfg = scenario.design
    looks = tuple(cfg.interim_ns) + (cfg.n_max,)
    xs = np.empty(0, dtype=np.int64)
    ts = np.empty(0, dtype=np.int64)
    ys = np.empty(0)
    restriction = None
    trace = []
    try:
        for stage, n_target in enumerate(looks):
            m = n_target - xs.size
            x_new, t_new = sample_subject(
                scenario.prevalence, scenario.rand_ratio, restriction, data_rng, size=m
            )
            y_new = generate_outcome(
                scenario.family, scenario.beta_true, x_new, t_new, data_rng
            )
            xs = np.concatenate([xs, x_new])
            ts = np.concatenate([ts, t_new])
            ys = np.concatenate([ys, np.atleast_1d(y_new)])
            data = TrialDataset(xs, ts, ys, scenario.family)
            draws = fit_posterior(data, scenario, summaries, fit_rng, grid_table)
            if draws_sink is not None:
                draws_sink.append((stage, draws, data))
            subspace = effective_subspace(
                draws, CANDIDATE_XS, cfg.e1, cfg.alpha, cfg.direction
            )
            weights = empirical_weights(data, subspace)
            delta = enriched_effect_draws(draws, weights, cfg.direction)
            decision = interim_decision(delta, cfg, subspace)
            is_final = n_target == cfg.n_max
            trace.append(
                {
                    "stage": stage,
                    "n": int(n_target),
                    "subspace": sorted(subspace),
                    "prob_efficacy": decision.prob_efficacy,
                    "prob_futility": decision.prob_futility,
                    "decision": "final" if is_final else decision.kind.value,
                }
            )
            mean_a = (
                draws.a_draws.mean(axis=0) if draws.a_draws.size else np.empty(0)
            )
            correct = correct_subspace(
                subspace, scenario.beta_true, cfg.e1, cfg.direction, CANDIDATE_XS
            )
            if is_final:
                success = decision.prob_efficacy > cfg.efficacy_cut
                futility_met = (
                    not success and decision.prob_futility > cfg.futility_cut
                )
                return TrialResult(
                    stop_stage=stage,
                    stop_reason=StopReason.MAX_N,
                    final_n=int(n_target),
                    final_subspace=subspace,
                    success=success,
                    futility_met=futility_met,
                    correct_subspace=correct,
                    mean_a=mean_a,
                    trace=trace,
                )
            if decision.kind is DecisionKind.STOP_EFFICACY:
                return TrialResult(
                    stop_stage=stage,
                    stop_reason=StopReason.EFFICACY,
                    final_n=int(n_target),
                    final_subspace=subspace,
                    success=True,
                    futility_met=False,
                    correct_subspace=correct,
                    mean_a=mean_a,
                    trace=trace,
                )
            if decision.kind is DecisionKind.STOP_FUTILITY:
                return TrialResult(
                    stop_stage=stage,
                    stop_reason=StopReason.FUTILITY,
                    final_n=int(n_target),
                    final_subspace=subspace,
                    success=False,
                    futility_met=True,
                    correct_subspace=correct,
                    mean_a=mean_a,
                    trace=trace,
                )
            restriction = subspace
    except Exception as exc:  # recorded, not silently dropped
        raise ReplicateFailure(replicate_id, exc) from exc
    raise AssertionError("unreachable: final look must return")


def _truth_subspace_empty(scenario: ScenarioConfig) -> bool:
    s = scenario.design.direction.sign
    bt = scenario.beta_true
    return not any(
        s * (bt.beta2 + bt.beta3 * x) > scenario.design.e1 for x in CANDIDATE_XS
    )


def _run_trial_task(args):
    scenario, rid, grid_table = args
    try:
        return rid, run_trial(scenario, rid, grid_table), None
    except ReplicateFailure as f:
        return rid, None, repr(f.cause)


def run_oc(scenario: ScenarioConfig, workers: int = 1) -> OperatingCharacteristics:
    """Run all replicates and aggregate operating characteristics.

    Results are collected by replicate_id, so aggregates do not depend on
    worker count. More than 1% replicate failures aborts the scenario.
    """
    summaries = resolve_summaries(scenario)
    grid_table = scenario_grid_table(scenario, summaries)
    tasks = [(scenario, rid, grid_table) for rid in range(scenario.n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_trial_task, tasks, chunksize=16))
    else:
        raw = [_run_trial_task(t) for t in tasks]
    raw.sort(key=lambda r: r[0])
    results = [r for _, r, _ in raw if r is not None]
    failures = [(rid, err) for rid, r, err in raw if r is None]
    if len(failures) > max(1, scenario.n_reps // 100):
        raise RuntimeError(
            f"scenario {scenario.scenario_id}: {len(failures)} replicate failures "
            f"(first: {failures[0]})"
        )
    n = len(results)
    eff = np.array([r.success for r in results], dtype=float)
    fut = np.array([r.futility_met for r in results], dtype=float)
    ns = np.array([r.final_n for r in results], dtype=float)
    gen = np.array([r.success and r.correct_subspace for r in results], dtype=float)
    mean_a = (
        np.mean([r.mean_a for r in results], axis=0)
        if results and results[0].mean_a.size
        else np.empty(0)
    )
    gen_power = None if _truth_subspace_empty(scenario) else float(gen.mean())
    se = lambda p: float(np.sqrt(p * (1.0 - p) / n)) if n else float("nan")
    return OperatingCharacteristics(
        scenario_id=scenario.scenario_id,
        efficacy_rate=float(eff.mean()) if n else float("nan"),
        generalized_power=gen_power,
        futility_rate=float(fut.mean()) if n else float("nan"),
        ess=float(ns.mean()) if n else float("nan"),
        mean_a=mean_a,
        n_reps_completed=n,
        n_failed=len(failures),
        mc_se={
            "efficacy": se(float(eff.mean())) if n else float("nan"),
            "futility": se(float(fut.mean())) if n else float("nan"),
            "ess": float(ns.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
        },
    )


def sweep(scenarios, workers: int = 1):
    """run_oc per scenario, preserving input order; failures isolated."""
    out = []
    for sc in scenarios:
        try:
            out.append(run_oc(sc, workers=workers))
        except Exception as exc:
            out.append(
                OperatingCharacteristics(
                    scenario_id=sc.scenario_id,
                    efficacy_rate=float("nan"),
                    generalized_power=None,
                    futility_rate=float("nan"),
                    ess=float("nan"),
                    mean_a=np.empty(0),
                    n_reps_completed=0,
                    n_failed=sc.n_reps,
                    mc_se={"error": repr(exc)},
                )
            )
    return out
