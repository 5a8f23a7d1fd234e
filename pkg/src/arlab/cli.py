"""Command line entry point.

Subcommands::

    arlab run --config cfg.json [--seed N] [--episodes K] [--out DIR] [--schedule-variant V]
    arlab check --config cfg.json [--seed N] [--episodes K]
    arlab eluder (--table FILE | --example linear-d2) [--epsilon E] [--non-strict]
    arlab compare ADAPTIVE_SUMMARY ORACLE_SUMMARY

Exit codes: 0 success, 2 config error, 3 generation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .diagnostics import (
    EluderSizeError,
    FunctionClassSample,
    audit_dataset,
    check_eigen_growth,
    eluder_dimension,
    estimate_rho_min,
)
from .families import GenerationError, verify_separation
from .linear import InfeasibleProfileError, LinearRunInfo, run_ucrl_vtr_lin
from .scenarios import general_scenario, sparse_linear_scenario
from .ucrl_vtr import VtrDataset, run_ucrl_vtr

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3


def _load(args) -> harness.ExperimentConfig:
    doc = json.loads(Path(args.config).read_text()) if args.config else None
    if doc is None:
        raise harness.ConfigError(["--config: required"])
    if getattr(args, "seed", None) is not None:
        doc["global_seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        doc["episodes"] = args.episodes
    if getattr(args, "out", None) is not None:
        doc["out_dir"] = args.out
    if getattr(args, "schedule_variant", None) is not None:
        doc["schedule_variant"] = args.schedule_variant
    return harness.ExperimentConfig.from_dict(doc)


def _cmd_run(args) -> int:
    cfg = _load(args)
    summary = harness.run_experiment(cfg)
    print(json.dumps({"digest": summary.digest, **summary.aggregates}, indent=1, sort_keys=True))
    return EXIT_OK


def _cmd_check(args) -> int:
    cfg = _load(args)
    seed_index = cfg.seeds[0]
    inst_rng, rng = harness.run_streams(cfg, seed_index)
    report: dict = {"scenario": cfg.scenario, "seed_index": seed_index}
    if cfg.scenario in ("general", "baseline-oracle", "baseline-largest"):
        mdp, fams = general_scenario(rng=inst_rng, **cfg.general)
        sep = verify_separation(fams, fams.true_kernel, fams.probe_values)
        report["separation_target"] = fams.separation
        report["separation_realized"] = sep.min_gap
        report["n_probes"] = int(np.atleast_2d(fams.probe_values).shape[0])
        data = VtrDataset(mdp.n_states, mdp.horizon)
        run_ucrl_vtr(mdp, fams.family(fams.realizable_index), cfg.episodes, cfg.delta, rng, dataset=data,
                     true_index=fams.true_index)
        audit = audit_dataset(data, fams.true_kernel, cfg.delta)
        report["martingale_violations"] = audit.violations
        report["martingale_violation_rate"] = audit.violation_rate
        report["sigma2_hat"] = audit.sigma2_hat
        report["sigma2_exact"] = audit.sigma2_exact
    else:
        lmdp = sparse_linear_scenario(rng=inst_rng, **cfg.linear)
        rho = estimate_rho_min(lmdp, 200, np.random.default_rng(rng.integers(2**32)))
        info = LinearRunInfo()
        run_ucrl_vtr_lin(lmdp, cfg.episodes, cfg.delta, cfg.b, rng, c_beta=cfg.c_beta, info=info)
        rep = check_eigen_growth(list(enumerate(info.lambda_min, 1)), rho, lmdp.horizon, cfg.delta,
                                 lmdp.dimension, cfg.episodes)
        report["rho_hat"] = rho
        report["tau_min"] = rep.tau_min if math.isfinite(rep.tau_min) else None
        report["eigen_checked"] = rep.checked
        report["eigen_violations"] = rep.violations
        report["final_lambda_min"] = info.lambda_min[-1]
        report["theta_norm"] = lmdp.theta_norm
    print(json.dumps(report, indent=1, sort_keys=True))
    return EXIT_OK


def linear_d2_example() -> FunctionClassSample:
    """``x -> <theta, x>`` for ``theta`` in ``{0,1}^2`` on the unit vectors."""
    thetas = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float64)
    inputs = np.eye(2)
    return FunctionClassSample(thetas @ inputs.T, 0.5, inputs=["e1", "e2"])


def _cmd_eluder(args) -> int:
    if args.example == "linear-d2":
        cls = linear_d2_example()
        if args.epsilon is not None:
            cls = FunctionClassSample(cls.table, args.epsilon, cls.inputs)
    elif args.table:
        try:
            table = json.loads(Path(args.table).read_text())
            cls = FunctionClassSample(table, 0.5 if args.epsilon is None else args.epsilon)
        except (ValueError, json.JSONDecodeError) as exc:
            raise harness.ConfigError([f"--table: {exc}"]) from exc
    else:
        raise harness.ConfigError(["--table or --example: one is required"])
    try:
        dim = eluder_dimension(cls, strict=not args.non_strict)
    except EluderSizeError as exc:
        raise harness.ConfigError([f"--table: {exc}"]) from exc
    print(json.dumps({"eluder_dimension": dim, "epsilon": cls.epsilon, "strict": not args.non_strict}))
    return EXIT_OK


def _cmd_compare(args) -> int:
    try:
        a = harness.RunSummary.load(args.adaptive)
        o = harness.RunSummary.load(args.oracle)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise harness.ConfigError([f"summary: {exc}"]) from exc
    try:
        report = harness.compare_to_oracle(a, o)
    except harness.SeedMismatchError as exc:
        raise harness.ConfigError([f"compare: {exc}"]) from exc
    print(json.dumps(report, indent=1, sort_keys=True, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arlab", description="Model-selection RL experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="override the global seed")
        sp.add_argument("--episodes", type=int, help="override the episode budget")

    r = sub.add_parser("run", help="run an experiment config")
    common(r)
    r.add_argument("--out", help="output directory")
    r.add_argument("--schedule-variant", choices=["literal", "remark"])
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check", help="assumption diagnostics on the config's first instance")
    common(c)
    c.set_defaults(func=_cmd_check)

    e = sub.add_parser("eluder", help="brute-force eluder dimension")
    e.add_argument("--table", help="JSON list of function evaluation rows")
    e.add_argument("--example", choices=["linear-d2"])
    e.add_argument("--epsilon", type=float)
    e.add_argument("--non-strict", action="store_true", help="count gaps equal to the scale")
    e.set_defaults(func=_cmd_eluder)

    m = sub.add_parser("compare", help="tail-regret comparison of two summaries")
    m.add_argument("adaptive")
    m.add_argument("oracle")
    m.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (GenerationError, InfeasibleProfileError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
