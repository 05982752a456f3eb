"""Command line entry point.

    locmor list
    locmor defaults example1-fixed > cfg.json
    locmor run --config cfg.json [--seed N] [--runs N] [--out DIR] [--threads N]
"""

import argparse
import json
import sys

from .experiments import (EXPERIMENT_IDS, ExperimentConfig, default_config,
                          run_experiment)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="locmor",
        description="Randomized range approximation experiments for "
                    "localized model order reduction.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured experiment")
    run.add_argument("--config", required=True,
                     help="path to a JSON experiment config")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    run.add_argument("--runs", type=int, default=None,
                     help="override the number of Monte Carlo runs")
    run.add_argument("--out", default=None,
                     help="override the output directory")
    run.add_argument("--threads", type=int, default=None,
                     help="override the worker thread count")

    defaults = sub.add_parser(
        "defaults", help="print the default config for an experiment")
    defaults.add_argument("experiment", choices=EXPERIMENT_IDS)

    sub.add_parser("list", help="list available experiments")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)

    if args.command == "list":
        for name in EXPERIMENT_IDS:
            print(name)
        return 0

    if args.command == "defaults":
        print(json.dumps(default_config(args.experiment), indent=2))
        return 0

    cfg = ExperimentConfig.from_json(args.config)
    for key in ("seed", "runs", "out", "threads"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
            if key == "runs" and "runs" in cfg.params:
                cfg.params["runs"] = value
    paths = run_experiment(cfg)
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
