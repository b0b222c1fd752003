"""Command-line entry point.

Subcommands:
    run <config.json>        run an experiment (all schedules x seeds)
    summarize <dir>          aggregate an artifact directory
    mcmc-ref <config.json>   compute and cache the reference chain
    rates <config.json>      fit hierarchy decay/cost exponents
    init-config <problem>    print a default config JSON to stdout

Exit codes: 0 success, 2 config error, 3 completed with flagged runs.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError
from .harness import (ExperimentConfig, compute_reference, default_config,
                      run_experiment, run_rate_fit, summarize)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed-offset", type=int, default=0,
                   help="offset added to every replicate seed")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for (schedule, seed) jobs; the "
                        "solvers also parallelize internally")
    p.add_argument("--cost-mode", choices=["measured", "analytic"],
                   default=None, help="override the config's cost-weight mode")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mlsvgd",
                                     description="Multilevel Stein benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    _add_common(p_run)

    p_sum = sub.add_parser("summarize", help="aggregate an artifact directory")
    p_sum.add_argument("directory")

    p_ref = sub.add_parser("mcmc-ref", help="compute and cache the reference chain")
    p_ref.add_argument("config")
    p_ref.add_argument("--force", action="store_true")
    p_ref.add_argument("--samples-csv", action="store_true",
                       help="also dump the retained samples as CSV")

    p_rates = sub.add_parser("rates", help="fit hierarchy rates for a config")
    p_rates.add_argument("config")

    p_init = sub.add_parser("init-config", help="print a default config")
    p_init.add_argument("problem",
                        choices=["diffusion-reaction", "beam", "gaussian-hierarchy"])
    p_init.add_argument("--output-dir", default="artifacts")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = ExperimentConfig.from_json(args.config)
            if args.cost_mode:
                config = ExperimentConfig.from_dict(
                    {**config.to_dict(), "cost_mode": args.cost_mode})
            summary = run_experiment(config, seed_offset=args.seed_offset,
                                     jobs=args.jobs)
            flagged = sum(s.get("flagged_runs", 0)
                          for s in summary["schedules"].values())
            print(json.dumps({"config_hash": summary["config_hash"],
                              "n_runs": summary["n_runs"],
                              "flagged_runs": flagged}, indent=2))
            return 3 if flagged else 0
        if args.command == "summarize":
            summary = summarize(args.directory)
            print(json.dumps(summary, indent=2))
            flagged = sum(s.get("flagged_runs", 0)
                          for s in summary["schedules"].values())
            return 3 if flagged else 0
        if args.command == "mcmc-ref":
            config = ExperimentConfig.from_json(args.config)
            payload = compute_reference(config, force=args.force,
                                        samples_csv=args.samples_csv)
            print(json.dumps(payload, indent=2))
            return 0
        if args.command == "rates":
            config = ExperimentConfig.from_json(args.config)
            payload = run_rate_fit(config)
            print(json.dumps(payload, indent=2))
            return 0
        if args.command == "init-config":
            config = default_config(args.problem, output_dir=args.output_dir)
            print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
