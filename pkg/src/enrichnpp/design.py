"""Adaptive enrichment decision engine.

At each interim the posterior draws of the blip gamma(x) = beta2 + beta3*x
determine (1) the effective subspace of biomarker levels with high posterior
probability of a clinically meaningful effect, (2) the enriched effect
Delta = sum_x w(x) * s * gamma(x) averaged over the empirical biomarker
distribution within that subspace, and (3) an efficacy / futility / continue
decision by posterior tail probabilities. The direction sign s is +1 when
larger effects are better and -1 otherwise, so larger Delta is always
favorable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import CoefficientVector, TrialDataset
from .sampler import PosteriorDraws

__all__ = [
    "Direction",
    "DesignConfig",
    "DecisionKind",
    "InterimDecision",
    "StopReason",
    "TrialResult",
    "effective_subspace",
    "empirical_weights",
    "enriched_effect_draws",
    "interim_decision",
    "final_analysis",
    "correct_subspace",
]


class Direction(enum.Enum):
    HIGHER_BETTER = "higher_better"
    LOWER_BETTER = "lower_better"

    @property
    def sign(self) -> float:
        return 1.0 if self is Direction.HIGHER_BETTER else -1.0


@dataclass(frozen=True)
class DesignConfig:
    """Thresholds and schedule for the enrichment procedure."""

    n_max: int
    interim_ns: tuple
    alpha: float = 0.05
    e1: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    efficacy_cut: float = 0.99   # B1
    futility_cut: float = 0.80   # B2
    direction: Direction = Direction.HIGHER_BETTER

    def __post_init__(self):
        ns = tuple(int(n) for n in self.interim_ns)
        object.__setattr__(self, "interim_ns", ns)
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("interim_ns must be nonempty and strictly increasing")
        if ns[-1] >= self.n_max:
            raise ValueError("interim looks must precede n_max")
        if not (0.5 < self.efficacy_cut < 1.0 and 0.5 < self.futility_cut < 1.0):
            raise ValueError("posterior cutoffs must lie in (0.5, 1)")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")


class DecisionKind(enum.Enum):
    STOP_EFFICACY = "stop_efficacy"
    STOP_FUTILITY = "stop_futility"
    CONTINUE_ENRICHED = "continue_enriched"


@dataclass(frozen=True)
class InterimDecision:
    kind: DecisionKind
    subspace: frozenset
    prob_efficacy: float
    prob_futility: float


class StopReason(enum.Enum):
    EFFICACY = "efficacy"
    FUTILITY = "futility"
    MAX_N = "max_n"


@dataclass
class TrialResult:
    """Outcome of one simulated trial replicate."""

    stop_stage: int
    stop_reason: StopReason
    final_n: int
    final_subspace: frozenset
    success: bool
    futility_met: bool
    correct_subspace: bool
    mean_a: np.ndarray
    trace: list = field(default_factory=list)
    sampler_flag: str | None = None


def effective_subspace(
    draws: PosteriorDraws,
    candidate_xs,
    e1: float,
    alpha: float,
    direction: Direction,
) -> frozenset:
    """Levels x with P(s * gamma(x) > e1) > 1 - alpha; full set as fallback."""
    s = direction.sign
    selected = set()
    for x in candidate_xs:
        gamma = draws.beta_draws[:, 2] + draws.beta_draws[:, 3] * x
        if np.mean(s * gamma > e1) > 1.0 - alpha:
            selected.add(x)
    if not selected:
        return frozenset(candidate_xs)
    return frozenset(selected)


def empirical_weights(data: TrialDataset, subspace) -> dict:
    """Renormalized empirical biomarker distribution within the subspace."""
    sub = sorted(subspace)
    counts = {x: int(np.sum(data.x == x)) for x in sub}
    total = sum(counts.values())
    if total == 0:
        raise ValueError("empty subspace sample: no enrolled subject in subspace")
    return {x: counts[x] / total for x in sub}


def enriched_effect_draws(
    draws: PosteriorDraws, weights: dict, direction: Direction
) -> np.ndarray:
    """Per-draw enriched effect, direction sign applied."""
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    s = direction.sign
    delta = np.zeros(draws.n_draws)
    for x, w in weights.items():
        delta += w * s * (draws.beta_draws[:, 2] + draws.beta_draws[:, 3] * x)
    return delta


def interim_decision(
    delta_draws: np.ndarray, config: DesignConfig, subspace
) -> InterimDecision:
    """Efficacy first, then futility, else continue within the subspace."""
    prob_eff = float(np.mean(delta_draws > config.b1))
    prob_fut = float(np.mean(delta_draws < config.b2))
    if prob_eff > config.efficacy_cut:
        kind = DecisionKind.STOP_EFFICACY
    elif prob_fut > config.futility_cut:
        kind = DecisionKind.STOP_FUTILITY
    else:
        kind = DecisionKind.CONTINUE_ENRICHED
    return InterimDecision(
        kind=kind,
        subspace=frozenset(subspace),
        prob_efficacy=prob_eff,
        prob_futility=prob_fut,
    )


def final_analysis(delta_draws: np.ndarray, config: DesignConfig) -> bool:
    """Success iff the interim efficacy rule holds at the final look."""
    return float(np.mean(delta_draws > config.b1)) > config.efficacy_cut


def correct_subspace(
    identified,
    truth_betas: CoefficientVector,
    e1: float,
    direction: Direction,
    candidate_xs=(0, 1),
) -> bool:
    """Does the identified set equal the truly effective levels?"""
    s = direction.sign
    truth = frozenset(
        x for x in candidate_xs if s * (truth_betas.beta2 + truth_betas.beta3 * x) > e1
    )
    return frozenset(identified) == truth
