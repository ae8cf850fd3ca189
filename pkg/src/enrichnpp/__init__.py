"""Adaptive enrichment trial simulation with normalized power prior borrowing.

The package is organized around a pipeline:

- :mod:`~enrichnpp.model` — the current-trial GLM (data, likelihood, MLE);
- :mod:`~enrichnpp.borrowing` — summary-anchored power priors: estimand
  mappings, linearization, and the normalizing constant C(a);
- :mod:`~enrichnpp.sampler` — adaptive Metropolis sampling and diagnostics;
- :mod:`~enrichnpp.design` — interim enrichment / stopping decisions;
- :mod:`~enrichnpp.simharness` — replicate simulation and operating
  characteristics;
- :mod:`~enrichnpp.scenario` — the YAML scenario file format;
- :mod:`~enrichnpp.cli` — the ``enrichnpp`` command-line entry point.
"""

from .borrowing import (
    BaselinePrior,
    GridTable,
    HistoricalSummary,
    LinearizedSummary,
    MappingKind,
    MappingSpec,
    NormalizationKind,
    NormalizationMethod,
    linearize_summary,
    log_c_closed_form,
    log_c_mc_grid,
    log_joint_posterior,
    mapping_h,
    mapping_jacobian,
)
from .design import DesignConfig, Direction, StopReason, TrialResult
from .model import (
    CoefficientVector,
    OutcomeFamily,
    TrialDataset,
    generate_outcome,
    mle_fit,
)
from .sampler import Diagnostics, PosteriorDraws, SamplerConfig, diagnostics, sample_posterior
from .scenario import load_scenarios, parse_scenario_dict
from .simharness import (
    OperatingCharacteristics,
    ScenarioConfig,
    SummaryGeneratorSpec,
    run_oc,
    run_trial,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "BaselinePrior",
    "CoefficientVector",
    "DesignConfig",
    "Diagnostics",
    "Direction",
    "GridTable",
    "HistoricalSummary",
    "LinearizedSummary",
    "MappingKind",
    "MappingSpec",
    "NormalizationKind",
    "NormalizationMethod",
    "OperatingCharacteristics",
    "OutcomeFamily",
    "PosteriorDraws",
    "SamplerConfig",
    "ScenarioConfig",
    "StopReason",
    "SummaryGeneratorSpec",
    "TrialDataset",
    "TrialResult",
    "diagnostics",
    "generate_outcome",
    "linearize_summary",
    "load_scenarios",
    "log_c_closed_form",
    "log_c_mc_grid",
    "log_joint_posterior",
    "mapping_h",
    "mapping_jacobian",
    "mle_fit",
    "parse_scenario_dict",
    "run_oc",
    "run_trial",
    "sample_posterior",
    "sweep",
    "__version__",
]
