"""Command-line front end.

Subcommands: ``oc`` (operating-characteristic sweeps), ``simulate`` (one
replicate with full artifact dumps), ``logc`` (normalizing-constant
tables), ``validate`` (oracle suites). Data goes to the output paths or
stdout; diagnostics go to stderr. Exit codes: 0 success, 1 configuration
error, 2 scenario failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from .borrowing import (
    MappingKind,
    NormalizationKind,
    NormalizationMethod,
    linearize_summary,
    log_c_closed_form,
    log_c_mc_grid,
)
from .scenario import ScenarioError, load_scenarios, scenario_to_dict
from .simharness import (
    ReplicateFailure,
    SummaryGeneratorSpec,
    resolve_summaries,
    run_oc,
    run_trial,
    sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SCENARIO = 2


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ENRICH_NPP_THREADS", "1")))
    except ValueError:
        return 1


def _load(path, seed_override=None, reps_override=None):
    scenarios = load_scenarios(path)
    out = []
    for sc in scenarios:
        if seed_override is not None:
            sc = dataclasses.replace(sc, base_seed=seed_override)
        if reps_override is not None:
            sc = dataclasses.replace(sc, n_reps=reps_override)
        out.append(sc)
    return out


def _method_name(sc) -> str:
    if not sc.summaries:
        return "none"
    return "linearized" if sc.linearized else "nonlinear"


def _oc_row(sc, oc) -> dict:
    n_t, delta, mu = sc.generator_meta()
    return {
        "scenario_id": oc.scenario_id,
        "n_t": n_t,
        "delta": "" if delta is None else delta,
        "mu_x_hist": "" if mu is None else mu,
        "method": _method_name(sc),
        "mean_a": ";".join(f"{v:.4f}" for v in np.atleast_1d(oc.mean_a)),
        "efficacy_rate": oc.efficacy_rate,
        "gen_power": "" if oc.generalized_power is None else oc.generalized_power,
        "futility_rate": oc.futility_rate,
        "ess": oc.ess,
        "mc_se_efficacy": oc.mc_se.get("efficacy", ""),
        "n_failed": oc.n_failed,
    }


def cmd_oc(args) -> int:
    try:
        scenarios = _load(args.scenario, args.seed, args.reps)
    except (ScenarioError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    results = sweep(scenarios, workers=args.workers)
    rows = [_oc_row(sc, oc) for sc, oc in zip(scenarios, results)]
    failed = any(oc.n_reps_completed == 0 for oc in results)
    if args.format == "json" or (args.out and str(args.out).endswith(".json")):
        payload = [
            {"scenario": scenario_to_dict(sc), "oc": _oc_row(sc, oc)}
            for sc, oc in zip(scenarios, results)
        ]
        text = json.dumps(payload, indent=2)
        _write(args.out, text)
    else:
        _write_csv(args.out, rows)
        if args.out:
            # JSON mirror with full configs for provenance
            mirror = os.path.splitext(args.out)[0] + ".json"
            payload = [
                {"scenario": scenario_to_dict(sc), "oc": _oc_row(sc, oc)}
                for sc, oc in zip(scenarios, results)
            ]
            with open(mirror, "w") as fh:
                json.dump(payload, fh, indent=2)
    return EXIT_SCENARIO if failed else EXIT_OK


def _write(out, text: str):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text + "\n")


def _write_csv(out, rows):
    if not rows:
        _write(out, "")
        return
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out:
            fh.close()


def cmd_simulate(args) -> int:
    try:
        scenarios = _load(args.scenario, args.seed)
    except (ScenarioError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if len(scenarios) != 1:
        _err("simulate requires a scenario file describing exactly one scenario")
        return EXIT_CONFIG
    sc = scenarios[0]
    os.makedirs(args.out, exist_ok=True)
    sink = []
    try:
        result = run_trial(sc, 0, draws_sink=sink)
    except ReplicateFailure as exc:
        _err(str(exc))
        return EXIT_SCENARIO
    stage, draws, data = sink[-1]
    with open(os.path.join(args.out, "subjects.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["enroll_index", "x", "t", "y"])
        for i, (x, t, y) in enumerate(zip(data.x, data.t, data.y)):
            w.writerow([i, int(x), int(t), float(y)])
    with open(os.path.join(args.out, "draws.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["chain", "iter", "beta0", "beta1", "beta2", "beta3"]
        header += [f"a_{h + 1}" for h in range(draws.n_hist)]
        if draws.sigma_draws is not None:
            header.append("sigma")
        w.writerow(header)
        it = 0
        prev_chain = -1
        for i in range(draws.n_draws):
            c = int(draws.chain_ids[i])
            it = it + 1 if c == prev_chain else 0
            prev_chain = c
            row = [c, it] + [f"{v:.6g}" for v in draws.beta_draws[i]]
            row += [f"{v:.6g}" for v in draws.a_draws[i]]
            if draws.sigma_draws is not None:
                row.append(f"{draws.sigma_draws[i]:.6g}")
            w.writerow(row)
    with open(os.path.join(args.out, "trace.jsonl"), "w") as fh:
        for rec in result.trace:
            fh.write(json.dumps(rec) + "\n")
    sign = sc.design.direction.sign
    summary = {
        "scenario_id": sc.scenario_id,
        "base_seed": sc.base_seed,
        "stop_reason": result.stop_reason.value,
        "final_n": result.final_n,
        "success": result.success,
        "final_subspace": sorted(result.final_subspace),
        "mean_a": [float(v) for v in np.atleast_1d(result.mean_a)],
        "subgroup_effects": {},
    }
    for x in (0, 1):
        gamma = draws.beta_draws[:, 2] + draws.beta_draws[:, 3] * x
        lo, hi = np.quantile(gamma, [0.025, 0.975])
        summary["subgroup_effects"][f"x={x}"] = {
            "mean": float(gamma.mean()),
            "ci95": [float(lo), float(hi)],
            "prob_favorable": float(np.mean(sign * gamma > sc.design.e1)),
        }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_logc(args) -> int:
    try:
        scenarios = _load(args.scenario, args.seed)
    except (ScenarioError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    sc = scenarios[0]
    summaries = resolve_summaries(sc)
    if not summaries:
        _err("logc requires at least one historical summary")
        return EXIT_CONFIG
    method = NormalizationMethod(
        NormalizationKind.MONTE_CARLO_GRID,
        sc.normalization.grid
        if sc.normalization.kind is NormalizationKind.MONTE_CARLO_GRID
        else np.linspace(0.0, 1.0, 101),
        sc.normalization.mc_draws,
    )
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=sc.base_seed, spawn_key=(0xC0FFEE,)))
    )
    table = log_c_mc_grid(summaries, sc.prior, method, rng)
    # closed-form column: exact for linear mappings, else the linearized
    # working model anchored at beta_true
    lin = [linearize_summary(s, sc.beta_true) for s in summaries]
    rows = []
    for a, lc in zip(table.a, table.log_c):
        closed = log_c_closed_form(np.full(len(summaries), a), lin, sc.prior)
        rows.append({"a": a, "logc_mc": f"{lc:.6f}", "logc_closed_form": f"{closed:.6f}"})
    _write_csv(args.out, rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_suites

    results = run_suites(args.level)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail}")
        all_ok = all_ok and r.passed
    return EXIT_OK if all_ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="enrichnpp",
        description="Adaptive enrichment trial simulator with summary-anchored "
        "normalized power prior borrowing.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    oc = sub.add_parser("oc", help="run operating-characteristic sweeps")
    oc.add_argument("scenario", help="scenario YAML file")
    oc.add_argument("--out", default=None, help="output CSV path (stdout if omitted)")
    oc.add_argument("--workers", type=int, default=_default_workers())
    oc.add_argument("--reps", type=int, default=None, help="override n_reps")
    oc.add_argument("--seed", type=int, default=None, help="override base_seed")
    oc.add_argument("--format", choices=("csv", "json"), default="csv")
    oc.set_defaults(func=cmd_oc)

    sim = sub.add_parser("simulate", help="run one replicate with full dumps")
    sim.add_argument("scenario")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None)
    sim.set_defaults(func=cmd_simulate)

    lc = sub.add_parser("logc", help="write the (a, log C) grid table")
    lc.add_argument("scenario")
    lc.add_argument("--out", default=None)
    lc.add_argument("--seed", type=int, default=None)
    lc.set_defaults(func=cmd_logc)

    va = sub.add_parser("validate", help="run the oracle validation suites")
    va.add_argument("--level", choices=("full", "quick"), default="full")
    va.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
