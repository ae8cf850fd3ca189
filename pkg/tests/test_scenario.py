"""Scenario files: fail-closed parsing, sweep expansion, round-trips."""

import numpy as np
import pytest
import yaml

from enrichnpp.borrowing import HistoricalSummary, MappingKind, NormalizationKind
from enrichnpp.model import OutcomeFamily
from enrichnpp.scenario import (
    ScenarioError,
    load_scenarios,
    parse_scenario_dict,
    scenario_equal,
    scenario_to_dict,
)
from enrichnpp.simharness import SummaryGeneratorSpec

MINIMAL = {
    "design": {"n_max": 100, "interim_ns": [60]},
}


def write(tmp_path, doc, name="s.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc, sort_keys=False))
    return p


def test_minimal_document_defaults():
    sc = parse_scenario_dict(dict(MINIMAL))
    assert sc.family is OutcomeFamily.BERNOULLI_LOGIT
    assert sc.design.n_max == 100 and sc.design.interim_ns == (60,)
    assert sc.design.alpha == 0.05 and sc.design.efficacy_cut == 0.99
    assert sc.prior.sigma0[0, 0] == 25.0
    assert sc.summaries == ()
    assert sc.linearized
    assert sc.normalization.kind is NormalizationKind.CLOSED_FORM_LINEARIZED
    assert sc.n_reps == 1000


def test_unknown_keys_fail_with_path():
    doc = dict(MINIMAL)
    doc["desing"] = {}
    with pytest.raises(ScenarioError, match="desing"):
        parse_scenario_dict(doc)
    doc = {"design": {"n_max": 100, "interim_ns": [60], "nmax": 1}}
    with pytest.raises(ScenarioError, match="design.nmax"):
        parse_scenario_dict(doc)
    doc = {
        "design": MINIMAL["design"],
        "summaries": [{"generator": {"n_T": 3}}],
    }
    with pytest.raises(ScenarioError, match="n_T"):
        parse_scenario_dict(doc)


def test_required_fields_and_enums():
    with pytest.raises(ScenarioError, match="n_max"):
        parse_scenario_dict({"design": {"interim_ns": [60]}})
    doc = {"design": MINIMAL["design"], "family": "poisson_log"}
    with pytest.raises(ScenarioError, match="poisson_log"):
        parse_scenario_dict(doc)
    doc = {
        "design": MINIMAL["design"],
        "summaries": [{"m_delta": 0.1}],
    }
    with pytest.raises(ScenarioError, match="sigma_delta"):
        parse_scenario_dict(doc)


def test_summary_entry_forms():
    doc = {
        "design": MINIMAL["design"],
        "summaries": [
            {"generator": {"n_t": 300, "delta_bias": 0.5}},
            {"m_delta": 0.1, "sigma_delta": 0.02, "mapping": "identity_identity"},
        ],
    }
    sc = parse_scenario_dict(doc)
    gen, expl = sc.summaries
    assert isinstance(gen, SummaryGeneratorSpec)
    assert gen.n_t == 300 and gen.delta_bias == 0.5
    assert gen.mapping is MappingKind.LOGIT_LOGIT
    assert isinstance(expl, HistoricalSummary)
    assert expl.sigma_delta.shape == (1, 1)


def test_nonlinear_requires_grid_normalization():
    doc = {
        "design": MINIMAL["design"],
        "summaries": [{"generator": {}}],
        "linearized": False,
        "normalization": {"kind": "closed_form_linearized"},
    }
    with pytest.raises(ValueError, match="Monte Carlo grid"):
        parse_scenario_dict(doc)
    # without an explicit kind, the default follows the fit style
    del doc["normalization"]
    sc = parse_scenario_dict(doc)
    assert sc.normalization.kind is NormalizationKind.MONTE_CARLO_GRID


def test_sweep_expansion(tmp_path):
    doc = {
        "scenario_id": "s",
        "design": {"n_max": 100, "interim_ns": [60]},
        "beta_true": {"beta3": 0.0},
        "summaries": [{"generator": {"delta_bias": 0.0}}],
        "sweep": {
            "summaries.0.generator.delta_bias": [-0.5, 0.5],
            "beta_true.beta3": [0.0, 0.65],
        },
    }
    scs = load_scenarios(write(tmp_path, doc))
    assert len(scs) == 4  # Cartesian product, declaration order
    assert scs[0].scenario_id == "s__delta_bias=-0.5_beta3=0"
    assert scs[-1].scenario_id == "s__delta_bias=0.5_beta3=0.65"
    assert scs[1].beta_true.beta3 == 0.65
    assert scs[2].summaries[0].delta_bias == 0.5


def test_sweep_path_must_exist(tmp_path):
    doc = {
        "design": {"n_max": 100, "interim_ns": [60]},
        "sweep": {"beta_true.beta3": [0.0]},
    }
    with pytest.raises(ScenarioError, match="sweep path"):
        load_scenarios(write(tmp_path, doc))


def test_round_trip(tmp_path):
    doc = {
        "scenario_id": "rt",
        "family": "gaussian_identity",
        "base_seed": 9,
        "n_reps": 7,
        "beta_true": {"beta2": 0.47, "beta3": -0.94},
        "design": {
            "n_max": 300,
            "interim_ns": [200],
            "efficacy_cut": 0.975,
            "direction": "lower_better",
        },
        "prior": {"sigma0": [25.0, 25.0, 4.0, 4.0]},
        "summaries": [
            {"m_delta": 0.05, "sigma_delta": 0.005, "mapping": "identity_identity"},
            {"generator": {"n_t": 400, "mapping": "identity_identity"}},
        ],
        "sampler": {"n_chains": 2, "n_iter": 400, "n_warmup": 100},
    }
    sc = load_scenarios(write(tmp_path, doc))[0]
    again = parse_scenario_dict(scenario_to_dict(sc))
    assert scenario_equal(sc, again)
    assert not scenario_equal(sc, load_scenarios(write(tmp_path, dict(MINIMAL), "t.yaml"))[0])
    assert np.array_equal(sc.prior.sigma0, np.diag([25.0, 25.0, 4.0, 4.0]))


def test_bundled_scenarios_all_parse():
    from importlib import resources

    root = resources.files("enrichnpp") / "scenarios"
    files = sorted(p for p in root.iterdir() if p.name.endswith(".yaml"))
    assert len(files) >= 10
    ids = []
    for f in files:
        for sc in load_scenarios(str(f)):
            ids.append(sc.scenario_id)
            assert sc.n_reps >= 1
    assert len(ids) == len(set(ids))
