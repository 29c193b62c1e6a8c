"""Command-line interface.

Subcommands: ``run`` a single experiment config, ``sweep`` a directory of
configs, ``oracle`` for exact small-instance reports, and ``report`` to
re-evaluate a finished run's learned policy against the exact layer.
``run`` exits 0 only when every agent meets its bound.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError
from .oracle import check_feasibility, evaluate_policy, solve_saddle
from .runner import ExperimentConfig, apply_bounds, build_spec, emit_policy_report, run_experiment, run_sweep


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    summary = run_experiment(config)
    print(json.dumps({"schema": "summary-v1", **summary.to_dict()}, indent=2, sort_keys=True))
    if args.plot_cmd:
        for mode, name in (("cost", "cost_vs_bound.png"), ("gap", "bound_gap.png")):
            cmd = [
                args.plot_cmd, summary.trace_path, str(Path(config.out_dir) / name),
                "--mode", mode, "--freeze-iter", str(config.learn_steps),
            ]
            try:
                subprocess.run(cmd, check=True)
            except (OSError, subprocess.CalledProcessError) as exc:
                print(f"plot hook failed: {exc}", file=sys.stderr)
    return 0 if summary.all_satisfied else 1


def _cmd_sweep(args) -> int:
    config_dir = Path(args.config_dir)
    paths = sorted(config_dir.glob("*.json"))
    if not paths:
        print(f"no configs found in {config_dir}", file=sys.stderr)
        return 2
    configs = [ExperimentConfig.from_file(p) for p in paths]
    results = run_sweep(configs, parallelism=args.parallelism)
    for path, res in zip(paths, results):
        res["config_file"] = str(path)
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0


def _cmd_oracle(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    spec = apply_bounds(build_spec(config.env), config.bounds)
    ref = config.bounds.get("reference_policy", 0)
    doc: dict = {"schema": "oracle-v1"}
    if ref == "uniform":
        ev = evaluate_policy(spec, "uniform")
        doc["reference_policy"] = "uniform"
    else:
        from .env import policy_from_id

        policy = policy_from_id(spec, int(ref) if "reference_policy" in config.bounds else 0)
        ev = evaluate_policy(spec, policy)
        doc["reference_policy"] = policy.tolist()
    doc["evaluation"] = {
        "stationary": ev.stationary.tolist(),
        "avg_cost": ev.avg_cost.tolist(),
        "beta": spec.bounds.tolist(),
    }
    try:
        witness = check_feasibility(spec)
        doc["feasible"] = witness is not None
        if witness is not None:
            doc["witness_policy"] = witness.tolist()
    except CapacityError as exc:
        doc["feasible"] = f"unknown ({exc})"
    try:
        saddle = solve_saddle(spec, args.eps, randomized_samples=args.randomized_samples)
        doc["saddle"] = {
            "eps": args.eps,
            "policy": saddle.policy.tolist(),
            "weights": saddle.weights.w.tolist(),
            "value": saddle.value,
            "worst_violation": saddle.worst_violation,
            "violation_bound": saddle.violation_bound,
            "bound_holds": saddle.bound_holds,
        }
        if saddle.randomized_gap is not None:
            doc["saddle"]["randomized_gap"] = saddle.randomized_gap
    except CapacityError as exc:
        doc["saddle"] = f"skipped ({exc})"
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    summary_path = Path(args.run_dir) / "summary.json"
    with open(summary_path) as fh:
        summary = json.load(fh)
    config = ExperimentConfig.from_dict(summary["config"])
    spec = apply_bounds(build_spec(config.env), config.bounds)
    report = emit_policy_report(
        spec,
        np.asarray(summary["policy"], dtype=int),
        empirical_z=np.asarray(summary["z_eval"], dtype=float),
    )
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gossipq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--plot-cmd", default=None, help="plotting executable to invoke on the trace")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run every *.json config in a directory")
    p_sweep.add_argument("config_dir")
    p_sweep.add_argument("--parallelism", type=int, default=1)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_oracle = sub.add_parser("oracle", help="exact evaluation, feasibility and saddle point")
    p_oracle.add_argument("config")
    p_oracle.add_argument("--eps", type=float, default=0.1)
    p_oracle.add_argument("--randomized-samples", type=int, default=0)
    p_oracle.set_defaults(func=_cmd_oracle)

    p_report = sub.add_parser("report", help="re-evaluate a finished run's learned policy")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
