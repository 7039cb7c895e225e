"""Command-line operator surface: train / adapt / hpo / report / heatmap."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import runner
from .config import parse_config
from .errors import CheckpointError, ConfigError, RunAborted


def parse_seed_range(text: str) -> list[int]:
    """Accepts '7', '0-29', or '0,3,17'."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part.lstrip("-")[1:] or ("-" in part and not part.startswith("-")):
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError(f"bad seed range {text!r}")
    return seeds


def _out_root(args) -> str:
    if args.out:
        return args.out
    return os.environ.get("FAULTADAPT_OUT", "runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faultadapt",
                                     description="Hardware-fault adaptation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seeds", help="seed range, e.g. 0-29 or 0,1,5")
        p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
        p.add_argument("--out", help="output root (default $FAULTADAPT_OUT or ./runs)")

    p_train = sub.add_parser("train", help="train in the config's environment")
    p_train.add_argument("--config", required=True)
    common(p_train)

    p_adapt = sub.add_parser("adapt", help="fault injection + phase-3 adaptation")
    p_adapt.add_argument("--config", required=True)
    p_adapt.add_argument("--snapshot", required=True,
                         help="train experiment dir, checkpoint file, or template with {seed}")
    p_adapt.add_argument("--approach", type=int, choices=(1, 2, 3, 4),
                         help="transfer approach; overrides the config")
    common(p_adapt)

    p_hpo = sub.add_parser("hpo", help="random hyperparameter search")
    p_hpo.add_argument("--space", required=True, help="search-space JSON file")
    p_hpo.add_argument("--env", required=True, choices=("quad_crawler", "reach_arm"))
    p_hpo.add_argument("--config-seeds", default="0-100")
    p_hpo.add_argument("--run-seeds", default="0-9")
    p_hpo.add_argument("--phase1-steps", type=int)
    p_hpo.add_argument("--eval-every", type=int)
    p_hpo.add_argument("--jobs", type=int, default=1)
    p_hpo.add_argument("--out")

    p_report = sub.add_parser("report", help="aggregate curves, savings, bars")
    p_report.add_argument("--runs", nargs="+", required=True, help="experiment dirs")
    p_report.add_argument("--out", required=True)

    p_heat = sub.add_parser("heatmap", help="state-visitation heatmap for one policy")
    p_heat.add_argument("--config", required=True)
    p_heat.add_argument("--snapshot", required=True, help="checkpoint file")
    p_heat.add_argument("--episodes", type=int, default=100)
    p_heat.add_argument("--bins", type=int, default=25)
    p_heat.add_argument("--out", required=True)

    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    seeds = parse_seed_range(args.seeds) if getattr(args, "seeds", None) else None

    if args.command == "train":
        xc = parse_config(args.config)
        exp_dir = runner.cmd_train(xc, _out_root(args), seeds=seeds, jobs=args.jobs)
        status = runner.experiment_status(exp_dir)
        print(json.dumps({"experiment_dir": exp_dir, "status": status}))
        return 0 if status["failed"] == 0 else 1

    if args.command == "adapt":
        xc = parse_config(args.config)
        exp_dir = runner.cmd_adapt(xc, args.snapshot, args.approach, _out_root(args),
                                   seeds=seeds, jobs=args.jobs)
        status = runner.experiment_status(exp_dir)
        print(json.dumps({"experiment_dir": exp_dir, "status": status}))
        return 0 if status["failed"] == 0 else 1

    if args.command == "hpo":
        result = runner.cmd_hpo(
            args.space, args.env, _out_root(args),
            config_seeds=parse_seed_range(args.config_seeds),
            run_seeds=parse_seed_range(args.run_seeds),
            phase1_steps=args.phase1_steps, eval_every=args.eval_every, jobs=args.jobs)
        print(json.dumps({"winner": result["winner"], "n_unique": result["n_unique"],
                          "dir": result["dir"]}))
        return 0

    if args.command == "report":
        result = runner.cmd_report(args.runs, args.out)
        print(json.dumps(result))
        return 0

    if args.command == "heatmap":
        xc = parse_config(args.config)
        path = runner.cmd_heatmap(xc, args.snapshot, args.out,
                                  episodes=args.episodes, bins=args.bins)
        print(json.dumps({"heatmap": path}))
        return 0

    return 2  # pragma: no cover


def main_with_args(argv=None) -> None:
    try:
        sys.exit(run(argv))
    except (ConfigError, CheckpointError, RunAborted, FileNotFoundError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        sys.exit(1)


def main() -> None:
    main_with_args(None)


if __name__ == "__main__":
    main()
