"""Command-line entry point.

Subcommands: train, baseline, sweep, validate-config, replay.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from dtwn import harness
from dtwn.network import ConfigError


def _add_common(p):
    p.add_argument("--config", default=None, help="YAML experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--quiet", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dtwn",
        description="Digital-twin wireless network simulator and optimizer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the multi-agent policy")
    _add_common(p)

    p = sub.add_parser("baseline", help="run a fixed-policy baseline")
    p.add_argument("--kind", choices=["random", "average"], required=True)
    _add_common(p)

    p = sub.add_parser("sweep", help="train across discount factors")
    p.add_argument("--gamma", type=float, nargs="+", required=True)
    _add_common(p)

    p = sub.add_parser("validate-config", help="parse and check a config")
    p.add_argument("--config", default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("replay", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_common(p)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    log = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "validate-config":
            cfg = harness.load_config(args.config)
            harness.build_setup(cfg)   # exercises network invariants too
            log("config ok")
            return 0

        cfg = harness.load_config(args.config)
        if args.command == "train":
            harness.run_experiment(cfg, out_dir=args.out, seed=args.seed,
                                   episodes=args.episodes,
                                   quiet=args.quiet, log=log)
            return 0
        if args.command == "baseline":
            cfg["experiment"]["pipeline"] = args.kind
            harness.run_experiment(cfg, out_dir=args.out, seed=args.seed,
                                   episodes=args.episodes,
                                   quiet=args.quiet, log=log)
            return 0
        if args.command == "sweep":
            out = args.out or cfg["experiment"]["out_dir"]
            harness.gamma_sweep(cfg, args.gamma, out, seed=args.seed,
                                episodes=args.episodes,
                                quiet=args.quiet, log=log)
            return 0
        if args.command == "replay":
            seed = cfg["experiment"]["seed"] if args.seed is None else args.seed
            _, _, _, _, env = harness.build_setup(cfg, seed=seed)
            trainer = harness.make_trainer(cfg, env, seed=seed)
            trainer.load_checkpoint(args.checkpoint)
            episodes = args.episodes or cfg["experiment"]["eval_episodes"]
            history = harness.evaluate_policy(trainer, episodes)
            times = [t for rec in history for t in rec["iteration_times"]]
            log(f"median iteration time over {episodes} episodes: "
                f"{np.median(times):.6g} s")
            if args.out:
                harness.write_history_csvs(args.out, history, env.num_agents,
                                           prefix="replay_")
            return 0
    except (ConfigError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
