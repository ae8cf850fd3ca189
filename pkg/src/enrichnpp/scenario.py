"""Scenario files: a YAML schema describing one or more simulation configs.

Parsing is fail-closed: unknown keys anywhere raise with the offending key
path, so typos in sweep definitions cannot silently change a study. A
``sweep`` section maps dotted field paths to value lists and expands to the
Cartesian product of all listed fields, in declaration order.

Schema (defaults in parentheses)::

    scenario_id: str ("scenario")
    base_seed: int (0)
    n_reps: int (1000)
    family: gaussian_identity | bernoulli_logit
    beta_true: {beta0, beta1, beta2, beta3, sigma (1.0)}
    prevalence: float (0.5)
    rand_ratio: float (0.5)
    design:
      n_max, interim_ns: [int, ...], alpha (0.05), e1 (0.0), b1 (0.0),
      b2 (0.0), efficacy_cut (0.99), futility_cut (0.80),
      direction: higher_better | lower_better
    prior:
      m0: scalar or [4 floats] (0), sigma0: scalar variance, [4] diagonal,
      or [[4 x 4]] (25), sigma_shape (2.0), sigma_scale (2.0)
    summaries:            # list; each entry is a generator or explicit
      - generator: {delta_bias, n_t, n_c, mu_x_hist, mapping,
                    a_prior_eta (4), a_prior_nu (1)}
      - m_delta: float or [floats]
        sigma_delta: float or matrix
        mapping: identity_identity | identity_logit | logit_logit |
                 log_logit | inverse_logit
        mu_x_hist: float
        a_prior_eta: (4), a_prior_nu: (1)
    linearized: bool (true)
    normalization: {kind: closed_form_linearized | monte_carlo_grid,
                    grid_points (101), mc_draws (20000)}
    sampler: {n_chains (1), n_iter (2000), n_warmup (500),
              target_accept (0.3)}
    sweep: {dotted.path: [values, ...], ...}
"""

from __future__ import annotations

import copy
import itertools

import numpy as np
import yaml

from .borrowing import (
    BaselinePrior,
    HistoricalSummary,
    MappingKind,
    MappingSpec,
    NormalizationKind,
    NormalizationMethod,
)
from .design import DesignConfig, Direction
from .model import CoefficientVector, OutcomeFamily
from .sampler import SamplerConfig
from .simharness import ScenarioConfig, SummaryGeneratorSpec

__all__ = [
    "ScenarioError",
    "load_scenarios",
    "parse_scenario_dict",
    "scenario_to_dict",
    "scenario_equal",
]


class ScenarioError(ValueError):
    """Invalid scenario file content; message carries the key path."""


def _check_keys(d: dict, allowed, path: str):
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: expected a mapping")
    for k in d:
        if k not in allowed:
            raise ScenarioError(f"unknown key '{path}.{k}'" if path else f"unknown key '{k}'")


_TOP_KEYS = {
    "scenario_id",
    "base_seed",
    "n_reps",
    "family",
    "beta_true",
    "prevalence",
    "rand_ratio",
    "design",
    "prior",
    "summaries",
    "linearized",
    "normalization",
    "sampler",
    "sweep",
}
_BETA_KEYS = {"beta0", "beta1", "beta2", "beta3", "sigma"}
_DESIGN_KEYS = {
    "n_max",
    "interim_ns",
    "alpha",
    "e1",
    "b1",
    "b2",
    "efficacy_cut",
    "futility_cut",
    "direction",
}
_PRIOR_KEYS = {"m0", "sigma0", "sigma_shape", "sigma_scale"}
_GEN_KEYS = {"delta_bias", "n_t", "n_c", "mu_x_hist", "mapping", "a_prior_eta", "a_prior_nu"}
_EXPL_KEYS = {"m_delta", "sigma_delta", "mapping", "mu_x_hist", "a_prior_eta", "a_prior_nu"}
_NORM_KEYS = {"kind", "grid_points", "mc_draws"}
_SAMPLER_KEYS = {"n_chains", "n_iter", "n_warmup", "target_accept"}


def _enum(cls, value, path):
    try:
        return cls(value)
    except ValueError:
        opts = ", ".join(e.value for e in cls)
        raise ScenarioError(f"{path}: '{value}' is not one of: {opts}") from None


def _parse_sigma0(raw):
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(4)
    if arr.ndim == 1 and arr.size == 4:
        return np.diag(arr)
    if arr.shape == (4, 4):
        return arr
    raise ScenarioError("prior.sigma0: expected scalar, length-4 diagonal, or 4x4")


def parse_scenario_dict(doc: dict) -> ScenarioConfig:
    """Validate one (already sweep-expanded) scenario mapping."""
    _check_keys(doc, _TOP_KEYS - {"sweep"}, "")
    bt = dict(doc.get("beta_true", {}))
    _check_keys(bt, _BETA_KEYS, "beta_true")
    beta_true = CoefficientVector(
        beta0=float(bt.get("beta0", 0.0)),
        beta1=float(bt.get("beta1", 0.0)),
        beta2=float(bt.get("beta2", 0.0)),
        beta3=float(bt.get("beta3", 0.0)),
        sigma=float(bt.get("sigma", 1.0)),
    )
    dz = dict(doc.get("design", {}))
    _check_keys(dz, _DESIGN_KEYS, "design")
    if "n_max" not in dz or "interim_ns" not in dz:
        raise ScenarioError("design.n_max and design.interim_ns are required")
    design = DesignConfig(
        n_max=int(dz["n_max"]),
        interim_ns=tuple(int(n) for n in dz["interim_ns"]),
        alpha=float(dz.get("alpha", 0.05)),
        e1=float(dz.get("e1", 0.0)),
        b1=float(dz.get("b1", 0.0)),
        b2=float(dz.get("b2", 0.0)),
        efficacy_cut=float(dz.get("efficacy_cut", 0.99)),
        futility_cut=float(dz.get("futility_cut", 0.80)),
        direction=_enum(Direction, dz.get("direction", "higher_better"), "design.direction"),
    )
    pr = dict(doc.get("prior", {}))
    _check_keys(pr, _PRIOR_KEYS, "prior")
    m0_raw = np.asarray(pr.get("m0", 0.0), dtype=float)
    m0 = np.full(4, float(m0_raw)) if m0_raw.ndim == 0 else m0_raw
    prior = BaselinePrior(
        m0=m0,
        sigma0=_parse_sigma0(pr.get("sigma0", 25.0)),
        sigma_shape=float(pr.get("sigma_shape", 2.0)),
        sigma_scale=float(pr.get("sigma_scale", 2.0)),
    )
    summaries = []
    for i, entry in enumerate(doc.get("summaries", []) or []):
        path = f"summaries[{i}]"
        if not isinstance(entry, dict):
            raise ScenarioError(f"{path}: expected a mapping")
        if "generator" in entry:
            _check_keys(entry, {"generator"}, path)
            g = dict(entry["generator"])
            _check_keys(g, _GEN_KEYS, f"{path}.generator")
            summaries.append(
                SummaryGeneratorSpec(
                    delta_bias=float(g.get("delta_bias", 0.0)),
                    n_t=int(g.get("n_t", 500)),
                    n_c=int(g.get("n_c", 500)),
                    mu_x_hist=float(g.get("mu_x_hist", 0.5)),
                    mapping=_enum(
                        MappingKind, g.get("mapping", "logit_logit"), f"{path}.generator.mapping"
                    ),
                    a_prior_eta=float(g.get("a_prior_eta", 4.0)),
                    a_prior_nu=float(g.get("a_prior_nu", 1.0)),
                )
            )
        else:
            _check_keys(entry, _EXPL_KEYS, path)
            if "m_delta" not in entry or "sigma_delta" not in entry:
                raise ScenarioError(f"{path}: m_delta and sigma_delta are required")
            m = np.atleast_1d(np.asarray(entry["m_delta"], dtype=float))
            sd = np.asarray(entry["sigma_delta"], dtype=float)
            if sd.ndim == 0:
                sd = np.eye(m.size) * float(sd)
            kind = _enum(MappingKind, entry.get("mapping", "identity_identity"), f"{path}.mapping")
            mu = float(entry.get("mu_x_hist", 0.5))
            summaries.append(
                HistoricalSummary(
                    m_delta=m,
                    sigma_delta=sd,
                    mappings=tuple(MappingSpec(kind, mu) for _ in range(m.size)),
                    a_prior_eta=float(entry.get("a_prior_eta", 4.0)),
                    a_prior_nu=float(entry.get("a_prior_nu", 1.0)),
                )
            )
    nm = dict(doc.get("normalization", {}))
    _check_keys(nm, _NORM_KEYS, "normalization")
    linearized = bool(doc.get("linearized", True))
    default_kind = (
        NormalizationKind.CLOSED_FORM_LINEARIZED if linearized else NormalizationKind.MONTE_CARLO_GRID
    )
    kind = (
        _enum(NormalizationKind, nm["kind"], "normalization.kind")
        if "kind" in nm
        else default_kind
    )
    normalization = NormalizationMethod(
        kind=kind,
        grid=np.linspace(0.0, 1.0, int(nm.get("grid_points", 101))),
        mc_draws=int(nm.get("mc_draws", 20_000)),
    )
    sm = dict(doc.get("sampler", {}))
    _check_keys(sm, _SAMPLER_KEYS, "sampler")
    sampler = SamplerConfig(
        n_chains=int(sm.get("n_chains", 1)),
        n_iter=int(sm.get("n_iter", 2000)),
        n_warmup=int(sm.get("n_warmup", 500)),
        target_accept=float(sm.get("target_accept", 0.30)),
        seed=0,
    )
    return ScenarioConfig(
        family=_enum(OutcomeFamily, doc.get("family", "bernoulli_logit"), "family"),
        beta_true=beta_true,
        design=design,
        prior=prior,
        summaries=tuple(summaries),
        prevalence=float(doc.get("prevalence", 0.5)),
        rand_ratio=float(doc.get("rand_ratio", 0.5)),
        normalization=normalization,
        linearized=linearized,
        sampler=sampler,
        n_reps=int(doc.get("n_reps", 1000)),
        base_seed=int(doc.get("base_seed", 0)),
        scenario_id=str(doc.get("scenario_id", "scenario")),
    )


def _set_path(doc: dict, dotted: str, value):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        key = int(p) if isinstance(node, list) else p
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            raise ScenarioError(f"sweep path '{dotted}' does not exist") from None
    last = parts[-1]
    key = int(last) if isinstance(node, list) else last
    if isinstance(node, list):
        if not 0 <= key < len(node):
            raise ScenarioError(f"sweep path '{dotted}' does not exist")
    elif key not in node:
        raise ScenarioError(f"sweep path '{dotted}' does not exist")
    node[key] = value


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def load_scenarios(path) -> list:
    """Parse a scenario file, expanding any sweep section."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ScenarioError("scenario file must contain a mapping")
    _check_keys(doc, _TOP_KEYS, "")
    sweep_spec = doc.pop("sweep", None)
    if not sweep_spec:
        return [parse_scenario_dict(doc)]
    if not isinstance(sweep_spec, dict):
        raise ScenarioError("sweep: expected a mapping of paths to value lists")
    paths = list(sweep_spec)
    grids = []
    for p in paths:
        vals = sweep_spec[p]
        if not isinstance(vals, list) or not vals:
            raise ScenarioError(f"sweep.{p}: expected a nonempty list")
        grids.append(vals)
    out = []
    base_id = str(doc.get("scenario_id", "scenario"))
    for combo in itertools.product(*grids):
        d = copy.deepcopy(doc)
        for p, v in zip(paths, combo):
            _set_path(d, p, v)
        suffix = "_".join(f"{p.split('.')[-1]}={_fmt(v)}" for p, v in zip(paths, combo))
        d["scenario_id"] = f"{base_id}__{suffix}"
        out.append(parse_scenario_dict(d))
    return out


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    """Serialize a config back to the file schema (for provenance output)."""
    summaries = []
    for s in sc.summaries:
        if isinstance(s, SummaryGeneratorSpec):
            summaries.append(
                {
                    "generator": {
                        "delta_bias": s.delta_bias,
                        "n_t": s.n_t,
                        "n_c": s.n_c,
                        "mu_x_hist": s.mu_x_hist,
                        "mapping": s.mapping.value,
                        "a_prior_eta": s.a_prior_eta,
                        "a_prior_nu": s.a_prior_nu,
                    }
                }
            )
        else:
            summaries.append(
                {
                    "m_delta": s.m_delta.tolist(),
                    "sigma_delta": s.sigma_delta.tolist(),
                    "mapping": s.mappings[0].kind.value,
                    "mu_x_hist": s.mappings[0].mu_x_hist,
                    "a_prior_eta": s.a_prior_eta,
                    "a_prior_nu": s.a_prior_nu,
                }
            )
    return {
        "scenario_id": sc.scenario_id,
        "base_seed": sc.base_seed,
        "n_reps": sc.n_reps,
        "family": sc.family.value,
        "beta_true": {
            "beta0": sc.beta_true.beta0,
            "beta1": sc.beta_true.beta1,
            "beta2": sc.beta_true.beta2,
            "beta3": sc.beta_true.beta3,
            "sigma": sc.beta_true.sigma,
        },
        "prevalence": sc.prevalence,
        "rand_ratio": sc.rand_ratio,
        "design": {
            "n_max": sc.design.n_max,
            "interim_ns": list(sc.design.interim_ns),
            "alpha": sc.design.alpha,
            "e1": sc.design.e1,
            "b1": sc.design.b1,
            "b2": sc.design.b2,
            "efficacy_cut": sc.design.efficacy_cut,
            "futility_cut": sc.design.futility_cut,
            "direction": sc.design.direction.value,
        },
        "prior": {
            "m0": sc.prior.m0.tolist(),
            "sigma0": sc.prior.sigma0.tolist(),
            "sigma_shape": sc.prior.sigma_shape,
            "sigma_scale": sc.prior.sigma_scale,
        },
        "summaries": summaries,
        "linearized": sc.linearized,
        "normalization": {
            "kind": sc.normalization.kind.value,
            "grid_points": int(sc.normalization.grid.size),
            "mc_draws": sc.normalization.mc_draws,
        },
        "sampler": {
            "n_chains": sc.sampler.n_chains,
            "n_iter": sc.sampler.n_iter,
            "n_warmup": sc.sampler.n_warmup,
            "target_accept": sc.sampler.target_accept,
        },
    }


def scenario_equal(a: ScenarioConfig, b: ScenarioConfig) -> bool:
    """Field-by-field semantic equality (ndarray-aware)."""

    def eq(u, v):
        if isinstance(u, np.ndarray) or isinstance(v, np.ndarray):
            return np.array_equal(np.asarray(u), np.asarray(v))
        if isinstance(u, (list, tuple)) and isinstance(v, (list, tuple)):
            return len(u) == len(v) and all(eq(x, y) for x, y in zip(u, v))
        if hasattr(u, "__dataclass_fields__") and hasattr(v, "__dataclass_fields__"):
            if type(u) is not type(v):
                return False
            return all(
                eq(getattr(u, f), getattr(v, f))
                for f in u.__dataclass_fields__
                if not f.startswith("_")
            )
        return u == v

    return eq(a, b)
