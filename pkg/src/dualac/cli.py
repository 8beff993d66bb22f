"""Command-line interface: train, ablation, oracle-check.

Config files are JSON objects mirroring DualAcConfig field names, e.g.::

    {"k": 10, "eta_v": 1.0, "eta_alpha": 1.0, "eta_mu": 0.5,
     "schedule": {"c": 0.5, "n0": 1.0, "beta": 0.5},
     "inner_v": {"stepsize": 0.2, "max_iters": 80, "grad_tol": 1e-4},
     "cg": {"max_iters": 20, "damping": 1e-4},
     "batch_m": 24, "iterations": 300, "seed": 0, "ablation": "full"}

MDP text files (for `--env mdp:<path>` and `oracle-check --mdp-file`) are
JSON with fields n_states, n_actions, gamma, reward [S][A],
transition [S][A][S], and mu [S].

Metrics stream as line-delimited JSON, one IterationRecord per line; the
process exits nonzero if an iteration fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .driver import DualAcConfig, IterationError, ablation_suite, run_experiment
from .envs import make_env
from .mdp import (
    bellman_optimality_operator,
    duality_gap,
    greedy_policy,
    load_mdp,
    occupancy_flow_residual,
    occupancy_from_policy,
    policy_from_occupancy,
    value_iteration,
)
from .optim import StepsizeSchedule

DEFAULT_CONFIGS = {
    "tabular": dict(
        k=10,
        eta_v=1.0,
        eta_alpha=1.0,
        eta_mu=0.5,
        schedule=StepsizeSchedule(c=0.5, n0=1.0, beta=0.5),
        batch_m=24,
        iterations=300,
        inner_v=dict(stepsize=0.2, max_iters=80, grad_tol=1e-4, biased_iters=1),
    ),
    "pendulum": dict(
        k=50,
        eta_v=1.0,
        eta_alpha=100.0,
        eta_mu=0.1,
        schedule=StepsizeSchedule(c=21.5, n0=85.0, beta=1.0),
        batch_m=52,
        iterations=300,
        inner_v=dict(stepsize=0.005, max_iters=200, grad_tol=1.0, biased_iters=1),
    ),
}


def default_config(env_name: str) -> DualAcConfig:
    """Tuned defaults per environment family."""
    key = "pendulum" if env_name == "pendulum" else "tabular"
    payload = dict(DEFAULT_CONFIGS[key])
    return DualAcConfig.from_dict(payload)


def _load_config(args, env_name: str) -> DualAcConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = DualAcConfig.from_dict(json.load(fh))
    else:
        cfg = default_config(env_name)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "ablation", None):
        overrides["ablation"] = args.ablation
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_train(args) -> int:
    cfg = _load_config(args, args.env)
    sink = None
    if not args.quiet:
        sink = lambda rec: print(rec.to_json_line())
    try:
        run_experiment(cfg, args.env, out_dir=args.out, record_sink=sink)
    except IterationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


def _cmd_ablation(args) -> int:
    cfg = _load_config(args, args.env)
    seeds = [int(s) for s in args.seeds.split(",")]
    try:
        result = ablation_suite(cfg, args.env, seeds)
    except IterationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for row in result["rows"]:
        print(json.dumps(row))
    for variant, stats in result["summary"].items():
        print(f"{variant}: {stats['mean']:.2f} +/- {stats['half_width']:.2f}")
    if args.out:
        import os

        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "ablation.json"), "w") as fh:
            json.dump(result, fh, indent=2)
    return 0


def _cmd_oracle_check(args) -> int:
    """Validate the LP-duality identities on a tabular environment or MDP file."""
    if args.mdp_file:
        mdp = load_mdp(args.mdp_file)
    else:
        env = make_env(args.env)
        mdp = env.as_tabular()
    tol = args.tol
    v_star = value_iteration(mdp, tol=min(tol * 1e-3, 1e-9))
    pi_star = greedy_policy(mdp, v_star)
    rho = occupancy_from_policy(mdp, pi_star)
    bellman_residual = float(np.max(np.abs(bellman_optimality_operator(mdp, v_star) - v_star)))
    checks = [
        ("fixed-point residual", bellman_residual <= tol, bellman_residual),
        ("occupancy normalization", abs(rho.sum() - 1.0) <= tol, abs(rho.sum() - 1.0)),
        ("flow constraint residual", occupancy_flow_residual(mdp, rho) <= tol, occupancy_flow_residual(mdp, rho)),
        ("strong duality gap", abs(duality_gap(mdp, v_star, rho)) <= tol, abs(duality_gap(mdp, v_star, rho))),
    ]
    recovered = policy_from_occupancy(rho)
    support = rho.sum(axis=1) > 1e-12
    policy_ok = bool(np.allclose(recovered[support], pi_star[support], atol=tol))
    checks.append(("policy recovery from occupancy", policy_ok, 0.0 if policy_ok else 1.0))
    failed = 0
    for name, ok, value in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({value:.3e})")
        failed += 0 if ok else 1
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dualac", description="Dual actor-critic training and oracle checks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--env", required=True, help="chain2 | chain5 | gridworld | pendulum | mdp:<path>")
    p_train.add_argument("--config", help="JSON config file mirroring DualAcConfig")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--iterations", type=int, default=None)
    p_train.add_argument("--ablation", choices=("full", "no_multistep", "no_pathreg", "no_unbiased_v", "naive"))
    p_train.add_argument("--out", help="output directory for records.jsonl and checkpoint.json")
    p_train.add_argument("--quiet", action="store_true", help="suppress per-iteration records on stdout")
    p_train.set_defaults(func=_cmd_train)

    p_abl = sub.add_parser("ablation", help="run the ablation variant comparison")
    p_abl.add_argument("--env", required=True)
    p_abl.add_argument("--config", help="JSON config file for the base (full) variant")
    p_abl.add_argument("--seeds", default="0,1", help="comma-separated seed list")
    p_abl.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    p_abl.add_argument("--iterations", type=int, default=None)
    p_abl.add_argument("--out", help="output directory for ablation.json")
    p_abl.set_defaults(func=_cmd_ablation)

    p_oracle = sub.add_parser("oracle-check", help="verify LP-duality identities on a tabular MDP")
    p_oracle.add_argument("--env", default="gridworld")
    p_oracle.add_argument("--mdp-file", help="JSON MDP file (overrides --env)")
    p_oracle.add_argument("--tol", type=float, default=1e-6)
    p_oracle.set_defaults(func=_cmd_oracle_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
